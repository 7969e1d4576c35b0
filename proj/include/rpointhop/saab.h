#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include <Eigen/Core>

namespace rpointhop {

/// One Saab transform: y_k = a_k^T v + b for the kept filters a_0..a_{K-1}.
///
/// Row 0 of `filters` is the DC filter (1/sqrt(N)) * ones; the remaining rows
/// are principal directions of the mean-centered AC parts, sorted by
/// descending variance. `energies` holds the normalized variance of every
/// spectral component (DC first, then all N-1 AC components), so it always
/// sums to one even when fewer filters are kept.
struct SaabLayer {
    std::size_t input_dim = 0;
    std::size_t kept_dim = 0;
    Eigen::MatrixXd filters;   // kept_dim x input_dim
    double bias = 0.0;         // max training-sample norm
    Eigen::VectorXd energies;  // input_dim fractions

    double energy(std::size_t k) const { return energies(static_cast<Eigen::Index>(k)); }

    /// Stored filter weights plus the bias.
    std::size_t parameter_count() const { return kept_dim * input_dim + 1; }
};

struct SaabFitParams {
    /// Keep filters until their cumulative energy reaches this fraction.
    double energy_keep = 1.0;
    /// Hard cap on kept filters; 0 means no cap.
    std::size_t max_dims = 0;
};

/// Fits a layer to `samples` (one sample per row). Needs at least two finite samples.
SaabLayer saab_fit(const Eigen::MatrixXd& samples, const SaabFitParams& params = {});

/// Throws std::invalid_argument on dimension mismatch. Inputs with norm above
/// the bias are accepted; their outputs may be negative.
Eigen::VectorXd saab_apply(const SaabLayer& layer, const Eigen::VectorXd& v);

/// Row-wise saab_apply over a sample matrix.
Eigen::MatrixXd saab_apply_rows(const SaabLayer& layer, const Eigen::MatrixXd& samples);

using ChannelId = std::uint64_t;

/// Independent saab_fit per channel.
std::map<ChannelId, SaabLayer> cw_saab_fit(const std::map<ChannelId, Eigen::MatrixXd>& per_channel_samples,
                                           const SaabFitParams& params = {});

enum class NodeStatus : std::uint8_t { intermediate = 0, discarded = 1, output = 2 };

struct TreeNode {
    std::uint32_t hop = 0;   // 0 for the root
    std::int64_t parent = -1;
    std::uint32_t channel = 0;  // index among the parent's spectral outputs
    double energy = 1.0;        // cumulative: product of ancestor fractions
    NodeStatus status = NodeStatus::intermediate;
};

/// Energy-annotated spectral tree. Node 0 is the root with energy 1.
class FeatureTree {
public:
    FeatureTree();

    const std::vector<TreeNode>& nodes() const { return nodes_; }
    const TreeNode& node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    /// Appends children of `parent` with cumulative energy parent.energy * fraction.
    /// Children above `threshold` become intermediate (or output when
    /// `final_hop`); the rest are discarded. Returns the new node ids.
    std::vector<std::size_t> add_children(std::size_t parent, std::uint32_t hop, const std::vector<double>& fractions,
                                          double threshold, bool final_hop);

    /// Ids of nodes at `hop` with the given status, ascending.
    std::vector<std::size_t> nodes_at(std::uint32_t hop, NodeStatus status) const;
    std::vector<std::size_t> output_nodes() const;

    /// Rebuilds a tree from serialized nodes; validates parent links.
    static FeatureTree from_nodes(std::vector<TreeNode> nodes);

private:
    std::vector<TreeNode> nodes_;
};

/// Free-function form of FeatureTree::add_children.
std::vector<std::size_t> propagate_energy(FeatureTree& tree, std::size_t parent, std::uint32_t hop,
                                          const std::vector<double>& fractions, double threshold,
                                          bool final_hop = false);

}  // namespace rpointhop
