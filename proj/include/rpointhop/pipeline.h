#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rpointhop/cloud.h"
#include "rpointhop/lrf.h"
#include "rpointhop/saab.h"
#include "rpointhop/spatial.h"

namespace rpointhop {

struct HopConfig {
    std::size_t num_points = 0;   // points kept at this hop
    std::size_t k_neighbors = 0;  // neighborhood size for octant pooling

    bool operator==(const HopConfig&) const = default;
};

struct ModelConfig {
    std::size_t k_lrf = 64;
    std::vector<HopConfig> hops{{1024, 64}, {768, 32}, {512, 48}, {384, 48}};
    double energy_threshold = 0.001;
    double energy_keep = 1.0;
    bool use_aux_attributes = false;
    /// Rescale each cloud into the unit sphere before sampling. Off by default:
    /// a cropped or noisy copy gets a different scale than its full original,
    /// which changes every coordinate-valued attribute.
    bool normalize = false;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Flat `key = value` text; hop lists are comma separated
/// (`num_points = 1024,768,512,384`).
ModelConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ModelConfig load_config(const std::string& path);
std::string format_config(const ModelConfig& config);

struct RPointHopModel {
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelConfig config;
    std::size_t aux_width = 0;
    SaabLayer hop1_layer;
    /// later_hops[h - 2] maps a hop-(h-1) tree node id to its channel-wise layer.
    std::vector<std::map<ChannelId, SaabLayer>> later_hops;
    FeatureTree tree;

    std::size_t num_hops() const { return config.hops.size(); }
    std::size_t feature_dim() const { return tree.output_nodes().size(); }
    /// Count of nodes passed on (or output, for the last hop) at each hop.
    std::vector<std::size_t> surviving_channels() const;
    std::size_t parameter_count() const;
};

/// Neighborhood structure of one hop, for diagnostics.
struct HopTrace {
    std::vector<std::size_t> points;                  // indices into the hop-1 sample
    std::vector<std::vector<std::size_t>> neighbors;  // per point, indices into the hop-1 sample
};

/// Per-point invariant descriptors for the points retained at the last hop.
struct FeatureSet {
    std::vector<std::size_t> point_indices;  // rows -> input cloud indices
    Points coords;                           // input-cloud coordinates of those points
    Eigen::MatrixXd features;                // one row per retained point

    /// Smallest |M^l - M^r| over every sign decision the feature depends on
    /// (the point's own at each hop and those of all points in its receptive
    /// field), and likewise the smallest relative LRF eigenvalue gap
    /// min(l1 - l2, l2 - l3) / l1. Small values mark features that can change
    /// under rounding because some frame in the receptive field flips or rotates.
    std::vector<double> sign_margin;
    std::vector<double> eigen_gap;

    std::vector<std::size_t> sampled_indices;  // hop-1 sample, as input cloud indices
    std::size_t lrf_neighbors = 0;
    std::vector<HopTrace> trace;               // filled when requested

    std::size_t size() const { return point_indices.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
};

struct ExtractOptions {
    /// Clouds smaller than the hop-1 point count are accepted and every hop
    /// count is scaled by N / hop-1 count (never below that hop's k).
    bool adapt_to_small_clouds = false;
    bool keep_trace = false;
};

/// Octant slot of a point in LRF coordinates; order +++, ++-, +-+, +--, -++, -+-, --+, ---.
/// Zero counts as positive.
inline int octant_of(const Eigen::Vector3d& p) {
    return (p.x() < 0.0 ? 4 : 0) | (p.y() < 0.0 ? 2 : 0) | (p.z() < 0.0 ? 1 : 0);
}

/// Mean LRF coordinates per octant (zero for empty octants), concatenated.
Eigen::Matrix<double, 24, 1> octant_means(std::span<const Eigen::Vector3d> lrf_coords);

/// Hop-1 attributes of `point_index`: k neighbors projected into the
/// sign-resolved LRF, then octant_means, then the aux row when `aux` is non-empty.
Eigen::VectorXd build_hop1_attributes(const PointCloud& cloud, std::size_t point_index, const Lrf& lrf,
                                      std::size_t k, const KnnIndex& index,
                                      const Eigen::VectorXd& aux = Eigen::VectorXd());

/// Mean channel value per octant (zero for empty octants).
Eigen::Matrix<double, 8, 1> build_later_hop_attributes(std::span<const double> channel_values,
                                                       std::span<const int> octants);

/// Same, with octants derived from neighbor offsets (neighbor - lrf.origin) in the signed LRF.
Eigen::Matrix<double, 8, 1> build_later_hop_attributes(std::span<const double> channel_values, const Lrf& lrf,
                                                       const SignState& signs,
                                                       std::span<const Eigen::Vector3d> neighbor_offsets);

/// Fits every hop on the pooled attributes of the corpus.
RPointHopModel train(const std::vector<PointCloud>& corpus, const ModelConfig& config);

FeatureSet extract_features(const RPointHopModel& model, const PointCloud& cloud, std::uint64_t seed,
                            const ExtractOptions& options = {});

/// Hop point counts used for a cloud of `n` points.
std::vector<HopConfig> effective_hops(const ModelConfig& config, std::size_t n, bool adapt);

// Model container: magic "RPH1", little-endian u32 format version, then the
// config, tree and layers, terminated by an FNV-1a 64-bit checksum.
std::string serialize_model(const RPointHopModel& model);
RPointHopModel deserialize_model(const std::string& bytes);
void save_model(const RPointHopModel& model, const std::string& path);
RPointHopModel load_model(const std::string& path);

}  // namespace rpointhop
