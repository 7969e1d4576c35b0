#include "rpointhop/pipeline.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include <spdlog/spdlog.h>

#include "rpointhop/errors.h"
#include "rpointhop/parallel.h"
#include "rpointhop/random.h"

namespace rpointhop {

void ModelConfig::validate() const {
    if (hops.empty()) throw std::invalid_argument("config: at least one hop is required");
    if (k_lrf < 3) throw std::invalid_argument("config: k_lrf must be at least 3");
    if (!(energy_threshold >= 0.0)) throw std::invalid_argument("config: energy_threshold must be >= 0");
    if (!(energy_keep > 0.0 && energy_keep <= 1.0)) throw std::invalid_argument("config: energy_keep must lie in (0, 1]");
    for (std::size_t h = 0; h < hops.size(); ++h) {
        const auto& hop = hops[h];
        const std::string where = "config: hop " + std::to_string(h + 1) + ": ";
        if (hop.k_neighbors < 8) throw std::invalid_argument(where + "k_neighbors must be at least 8");
        if (hop.num_points < hop.k_neighbors) throw std::invalid_argument(where + "num_points must be >= k_neighbors");
        if (h > 0 && hop.num_points > hops[h - 1].num_points) {
            throw std::invalid_argument(where + "num_points exceeds the previous hop");
        }
    }
    if (k_lrf > hops[0].num_points) throw std::invalid_argument("config: k_lrf exceeds the hop-1 point count");
}

std::vector<std::size_t> RPointHopModel::surviving_channels() const {
    std::vector<std::size_t> out;
    const auto hops = static_cast<std::uint32_t>(num_hops());
    for (std::uint32_t h = 1; h <= hops; ++h) {
        out.push_back(tree.nodes_at(h, h == hops ? NodeStatus::output : NodeStatus::intermediate).size());
    }
    return out;
}

std::size_t RPointHopModel::parameter_count() const {
    std::size_t total = hop1_layer.parameter_count();
    for (const auto& hop : later_hops) {
        for (const auto& [node, layer] : hop) total += layer.parameter_count();
    }
    return total;
}

Eigen::Matrix<double, 24, 1> octant_means(std::span<const Eigen::Vector3d> lrf_coords) {
    Eigen::Matrix<double, 24, 1> sums = Eigen::Matrix<double, 24, 1>::Zero();
    std::array<int, 8> counts{};
    for (const auto& p : lrf_coords) {
        const int o = octant_of(p);
        sums.segment<3>(3 * o) += p;
        ++counts[static_cast<std::size_t>(o)];
    }
    for (int o = 0; o < 8; ++o) {
        if (counts[static_cast<std::size_t>(o)] > 0) sums.segment<3>(3 * o) /= counts[static_cast<std::size_t>(o)];
    }
    return sums;
}

Eigen::VectorXd build_hop1_attributes(const PointCloud& cloud, std::size_t point_index, const Lrf& lrf,
                                      std::size_t k, const KnnIndex& index, const Eigen::VectorXd& aux) {
    if (k < 8) throw std::invalid_argument("build_hop1_attributes: k must be at least 8");
    if (k > index.size()) {
        throw std::invalid_argument("build_hop1_attributes: needs " + std::to_string(k) + " neighbors, cloud has " +
                                    std::to_string(index.size()));
    }
    const auto nn = index.knn_indices(cloud.point(point_index), k);
    Points neighbors;
    neighbors.reserve(nn.size());
    for (std::size_t j : nn) neighbors.push_back(index.points()[j]);
    const SignState signs = resolve_signs(lrf, neighbors);
    const Points local = project_to_lrf(neighbors, lrf, signs);
    Eigen::VectorXd out(24 + aux.size());
    out.head<24>() = octant_means(local);
    if (aux.size() > 0) out.tail(aux.size()) = aux;
    return out;
}

Eigen::Matrix<double, 8, 1> build_later_hop_attributes(std::span<const double> channel_values,
                                                       std::span<const int> octants) {
    if (channel_values.size() != octants.size()) {
        throw std::invalid_argument("build_later_hop_attributes: values and octants differ in length");
    }
    Eigen::Matrix<double, 8, 1> sums = Eigen::Matrix<double, 8, 1>::Zero();
    std::array<int, 8> counts{};
    for (std::size_t j = 0; j < octants.size(); ++j) {
        const int o = octants[j];
        if (o < 0 || o > 7) throw std::invalid_argument("build_later_hop_attributes: octant out of range");
        sums(o) += channel_values[j];
        ++counts[static_cast<std::size_t>(o)];
    }
    for (int o = 0; o < 8; ++o) {
        if (counts[static_cast<std::size_t>(o)] > 0) sums(o) /= counts[static_cast<std::size_t>(o)];
    }
    return sums;
}

Eigen::Matrix<double, 8, 1> build_later_hop_attributes(std::span<const double> channel_values, const Lrf& lrf,
                                                       const SignState& signs,
                                                       std::span<const Eigen::Vector3d> neighbor_offsets) {
    const Eigen::Matrix3d axes = oriented_axes(lrf, signs);
    std::vector<int> octants;
    octants.reserve(neighbor_offsets.size());
    for (const auto& d : neighbor_offsets) octants.push_back(octant_of(axes * d));
    return build_later_hop_attributes(channel_values, octants);
}

std::vector<HopConfig> effective_hops(const ModelConfig& config, std::size_t n, bool adapt) {
    std::vector<HopConfig> hops = config.hops;
    const std::size_t n1 = hops.front().num_points;
    if (n >= n1) return hops;
    if (!adapt) {
        throw std::invalid_argument("cloud has " + std::to_string(n) + " points; the model needs at least " +
                                    std::to_string(n1));
    }
    const double factor = static_cast<double>(n) / static_cast<double>(n1);
    hops[0].num_points = n;
    for (std::size_t h = 1; h < hops.size(); ++h) {
        auto scaled = static_cast<std::size_t>(std::floor(static_cast<double>(config.hops[h].num_points) * factor));
        scaled = std::max(scaled, hops[h].k_neighbors);
        hops[h].num_points = std::min(scaled, hops[h - 1].num_points);
    }
    for (std::size_t h = 0; h < hops.size(); ++h) {
        if (hops[h].k_neighbors > hops[h].num_points) {
            throw std::invalid_argument("cloud has " + std::to_string(n) + " points, too few for hop " +
                                        std::to_string(h + 1) + " with k=" + std::to_string(hops[h].k_neighbors));
        }
    }
    if (config.k_lrf > n) {
        throw std::invalid_argument("cloud has " + std::to_string(n) + " points, fewer than k_lrf=" +
                                    std::to_string(config.k_lrf));
    }
    return hops;
}

namespace {

struct PreparedCloud {
    Points pts;                        // hop-1 sample, normalized when configured
    std::vector<std::size_t> sampled;  // input-cloud index of each sample point
    std::vector<Lrf> lrfs;
    Eigen::MatrixXd aux;               // rows per sample point when aux attributes are on
};

PreparedCloud prepare(const PointCloud& cloud, const ModelConfig& config, std::size_t n1, std::uint64_t seed) {
    PreparedCloud pc;
    const PointCloud work = config.normalize ? normalize_unit_sphere(cloud).cloud : cloud;
    pc.sampled = random_sample_indices(cloud.size(), n1, seed);
    pc.pts.reserve(n1);
    for (std::size_t i : pc.sampled) pc.pts.push_back(work.point(i));

    const PointCloud sample(pc.pts);
    const KnnIndex index(pc.pts);
    pc.lrfs.resize(n1);
    parallel_for(n1, [&](std::size_t i) { pc.lrfs[i] = compute_lrf(sample, i, config.k_lrf, index); });

    if (config.use_aux_attributes) {
        // Aux rows use the sign state of the LRF neighborhood itself.
        pc.aux.resize(static_cast<Eigen::Index>(n1), static_cast<Eigen::Index>(kGeometricAuxWidth));
        parallel_for(n1, [&](std::size_t i) {
            const auto nn = index.knn_indices(pc.pts[i], config.k_lrf);
            Points neighbors;
            neighbors.reserve(nn.size());
            for (std::size_t j : nn) neighbors.push_back(pc.pts[j]);
            const SignState signs = resolve_signs(pc.lrfs[i], neighbors);
            pc.aux.row(static_cast<Eigen::Index>(i)) = geometric_attributes(pc.lrfs[i], signs).transpose();
        });
    }
    return pc;
}

struct HopGeometry {
    std::vector<std::size_t> points;     // indices into PreparedCloud::pts
    std::vector<std::size_t> prev_rows;  // row of each point in the previous hop
    std::vector<std::vector<std::uint32_t>> neighbor_rows;
    std::vector<std::vector<int>> octants;
    std::vector<Eigen::Matrix<double, 24, 1>> hop1_means;  // only filled for hop 1
    std::vector<double> margin;

    std::size_t size() const { return points.size(); }
};

HopGeometry hop_geometry(const PreparedCloud& pc, const HopGeometry* prev, const HopConfig& hop) {
    HopGeometry g;
    if (prev == nullptr) {
        g.points.resize(pc.pts.size());
        std::iota(g.points.begin(), g.points.end(), 0);
        g.prev_rows = g.points;
    } else {
        Points prev_coords;
        prev_coords.reserve(prev->size());
        for (std::size_t p : prev->points) prev_coords.push_back(pc.pts[p]);
        g.prev_rows = farthest_point_sample(prev_coords, hop.num_points, 0);
        g.points.reserve(g.prev_rows.size());
        for (std::size_t r : g.prev_rows) g.points.push_back(prev->points[r]);
    }
    const std::size_t n = g.points.size();
    Points coords;
    coords.reserve(n);
    for (std::size_t p : g.points) coords.push_back(pc.pts[p]);
    const KnnIndex index(coords);

    g.neighbor_rows.resize(n);
    g.octants.resize(n);
    g.margin.resize(n);
    if (prev == nullptr) g.hop1_means.resize(n);
    parallel_for(n, [&](std::size_t i) {
        const auto nn = index.knn_indices(coords[i], hop.k_neighbors);
        Points neighbors;
        neighbors.reserve(nn.size());
        for (std::size_t j : nn) neighbors.push_back(coords[j]);
        const Lrf& lrf = pc.lrfs[g.points[i]];
        const SignState signs = resolve_signs(lrf, neighbors);
        g.margin[i] = sign_margin(lrf, neighbors);
        const Points local = project_to_lrf(neighbors, lrf, signs);
        auto& rows = g.neighbor_rows[i];
        auto& oct = g.octants[i];
        rows.reserve(nn.size());
        oct.reserve(nn.size());
        for (std::size_t j = 0; j < nn.size(); ++j) {
            rows.push_back(static_cast<std::uint32_t>(nn[j]));
            oct.push_back(octant_of(local[j]));
        }
        if (prev == nullptr) g.hop1_means[i] = octant_means(local);
    });
    return g;
}

Eigen::MatrixXd hop1_attributes(const PreparedCloud& pc, const HopGeometry& g) {
    const Eigen::Index width = 24 + pc.aux.cols();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(g.size()), width);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        out.row(r).head<24>() = g.hop1_means[i].transpose();
        if (pc.aux.cols() > 0) out.row(r).tail(pc.aux.cols()) = pc.aux.row(static_cast<Eigen::Index>(g.points[i]));
    }
    return out;
}

// 8-D octant means of one channel of the previous hop's outputs.
Eigen::MatrixXd channel_attributes(const HopGeometry& g, const Eigen::MatrixXd& prev_values, Eigen::Index column) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.size()), 8);
    for (std::size_t i = 0; i < g.size(); ++i) {
        std::array<double, 8> sums{};
        std::array<int, 8> counts{};
        const auto& rows = g.neighbor_rows[i];
        const auto& oct = g.octants[i];
        for (std::size_t j = 0; j < rows.size(); ++j) {
            const auto o = static_cast<std::size_t>(oct[j]);
            sums[o] += prev_values(static_cast<Eigen::Index>(g.prev_rows[rows[j]]), column);
            ++counts[o];
        }
        for (std::size_t o = 0; o < 8; ++o) {
            if (counts[o] > 0) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(o)) = sums[o] / counts[o];
        }
    }
    return out;
}

std::vector<double> kept_fractions(const SaabLayer& layer) {
    std::vector<double> f(layer.kept_dim);
    for (std::size_t k = 0; k < layer.kept_dim; ++k) f[k] = layer.energy(k);
    return f;
}

[[noreturn]] void no_survivors(std::size_t hop, std::size_t num_hops) {
    if (hop < num_hops) {
        throw TrainingError("zero surviving channels at hop " + std::to_string(hop + 1) +
                            " (no hop-" + std::to_string(hop) + " node exceeds the energy threshold)");
    }
    throw TrainingError("zero output channels at hop " + std::to_string(hop));
}

Eigen::MatrixXd assemble(const std::vector<Eigen::VectorXd>& columns, Eigen::Index rows) {
    Eigen::MatrixXd out(rows, static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = columns[c];
    return out;
}

}  // namespace

RPointHopModel train(const std::vector<PointCloud>& corpus, const ModelConfig& config) {
    config.validate();
    if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
    const std::size_t num_hops = config.hops.size();
    const std::size_t n1 = config.hops.front().num_points;
    for (std::size_t c = 0; c < corpus.size(); ++c) {
        if (corpus[c].size() < n1) {
            throw std::invalid_argument("train: cloud " + std::to_string(c) + " has " +
                                        std::to_string(corpus[c].size()) + " points, hop 1 needs " +
                                        std::to_string(n1));
        }
    }

    RPointHopModel model;
    model.config = config;
    model.aux_width = config.use_aux_attributes ? kGeometricAuxWidth : 0;
    const SaabFitParams fit{config.energy_keep, 0};
    const double threshold = config.energy_threshold;

    std::vector<PreparedCloud> clouds;
    clouds.reserve(corpus.size());
    for (std::size_t c = 0; c < corpus.size(); ++c) {
        clouds.push_back(prepare(corpus[c], config, n1, derive_seed(config.seed, c)));
    }

    // Hop 1: one Saab transform over the pooled LRF octant attributes.
    std::vector<HopGeometry> geoms;
    std::vector<Eigen::MatrixXd> attrs;
    for (const auto& pc : clouds) {
        geoms.push_back(hop_geometry(pc, nullptr, config.hops[0]));
        attrs.push_back(hop1_attributes(pc, geoms.back()));
        geoms.back().hop1_means.clear();
    }
    const Eigen::Index width = attrs.front().cols();
    Eigen::MatrixXd pooled(static_cast<Eigen::Index>(clouds.size() * n1), width);
    for (std::size_t c = 0; c < clouds.size(); ++c) {
        pooled.middleRows(static_cast<Eigen::Index>(c * n1), static_cast<Eigen::Index>(n1)) = attrs[c];
    }
    model.hop1_layer = saab_fit(pooled, fit);
    pooled.resize(0, 0);
    const auto hop1_children =
        model.tree.add_children(0, 1, kept_fractions(model.hop1_layer), threshold, num_hops == 1);

    std::vector<std::size_t> channels;  // surviving node ids, ascending
    std::vector<Eigen::MatrixXd> values(clouds.size());
    {
        std::vector<Eigen::Index> keep_cols;
        for (std::size_t k = 0; k < hop1_children.size(); ++k) {
            if (model.tree.node(hop1_children[k]).status != NodeStatus::discarded) {
                channels.push_back(hop1_children[k]);
                keep_cols.push_back(static_cast<Eigen::Index>(k));
            }
        }
        if (channels.empty()) no_survivors(1, num_hops);
        for (std::size_t c = 0; c < clouds.size(); ++c) {
            const Eigen::MatrixXd y = saab_apply_rows(model.hop1_layer, attrs[c]);
            values[c] = y(Eigen::all, keep_cols);
        }
        attrs.clear();
    }
    spdlog::debug("hop 1: {} of {} channels pass", channels.size(), hop1_children.size());

    // Hops 2..H: channel-wise Saab per surviving node.
    for (std::size_t h = 2; h <= num_hops; ++h) {
        const HopConfig& hop = config.hops[h - 1];
        const bool final_hop = h == num_hops;
        std::vector<HopGeometry> next_geoms;
        next_geoms.reserve(clouds.size());
        for (std::size_t c = 0; c < clouds.size(); ++c) next_geoms.push_back(hop_geometry(clouds[c], &geoms[c], hop));

        std::map<ChannelId, SaabLayer> layers;
        std::vector<std::size_t> next_channels;
        std::vector<std::vector<Eigen::VectorXd>> next_columns(clouds.size());
        for (std::size_t col = 0; col < channels.size(); ++col) {
            std::vector<Eigen::MatrixXd> channel_attrs(clouds.size());
            Eigen::MatrixXd channel_pool(static_cast<Eigen::Index>(clouds.size() * hop.num_points), 8);
            for (std::size_t c = 0; c < clouds.size(); ++c) {
                channel_attrs[c] = channel_attributes(next_geoms[c], values[c], static_cast<Eigen::Index>(col));
                channel_pool.middleRows(static_cast<Eigen::Index>(c * hop.num_points),
                                        static_cast<Eigen::Index>(hop.num_points)) = channel_attrs[c];
            }
            SaabLayer layer = saab_fit(channel_pool, fit);
            const auto kids = model.tree.add_children(channels[col], static_cast<std::uint32_t>(h),
                                                      kept_fractions(layer), threshold, final_hop);
            for (std::size_t k = 0; k < kids.size(); ++k) {
                if (model.tree.node(kids[k]).status == NodeStatus::discarded) continue;
                next_channels.push_back(kids[k]);
                const Eigen::VectorXd filter = layer.filters.row(static_cast<Eigen::Index>(k)).transpose();
                for (std::size_t c = 0; c < clouds.size(); ++c) {
                    next_columns[c].push_back((channel_attrs[c] * filter).array() + layer.bias);
                }
            }
            layers.emplace(channels[col], std::move(layer));
        }
        model.later_hops.push_back(std::move(layers));
        if (next_channels.empty()) no_survivors(h, num_hops);
        spdlog::debug("hop {}: {} channels pass", h, next_channels.size());
        for (std::size_t c = 0; c < clouds.size(); ++c) {
            values[c] = assemble(next_columns[c], static_cast<Eigen::Index>(hop.num_points));
        }
        geoms = std::move(next_geoms);
        channels = std::move(next_channels);
    }
    return model;
}

FeatureSet extract_features(const RPointHopModel& model, const PointCloud& cloud, std::uint64_t seed,
                            const ExtractOptions& options) {
    const ModelConfig& config = model.config;
    const auto hops = effective_hops(config, cloud.size(), options.adapt_to_small_clouds);
    const std::size_t num_hops = hops.size();
    const PreparedCloud pc = prepare(cloud, config, hops.front().num_points, seed);
    if (static_cast<std::size_t>(pc.aux.cols()) != model.aux_width) {
        throw std::invalid_argument("extract_features: aux width does not match the model");
    }

    const auto& nodes = model.tree.nodes();
    std::vector<std::vector<std::size_t>> children(nodes.size());
    for (std::size_t i = 1; i < nodes.size(); ++i) children[static_cast<std::size_t>(nodes[i].parent)].push_back(i);

    FeatureSet fs;
    fs.sampled_indices = pc.sampled;
    fs.lrf_neighbors = config.k_lrf;
    // Receptive-field diagnostics per hop-1 sample point: the smallest sign
    // margin and relative eigen-gap among every LRF the current value depends on.
    std::vector<double> rf_margin(pc.pts.size(), std::numeric_limits<double>::infinity());
    std::vector<double> rf_gap(pc.pts.size(), std::numeric_limits<double>::infinity());
    auto relative_gap = [&](std::size_t p) {
        const Eigen::Vector3d& ev = pc.lrfs[p].eigenvalues;
        const double scale = std::max(ev(0), std::numeric_limits<double>::min());
        return std::min(ev(0) - ev(1), ev(1) - ev(2)) / scale;
    };
    auto note = [&](const HopGeometry& g, bool first) {
        std::vector<double> margin_next = rf_margin, gap_next = rf_gap;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t p = g.points[i];
            double m = g.margin[i];
            double gap = relative_gap(p);
            if (!first) {
                for (auto r : g.neighbor_rows[i]) {
                    m = std::min(m, rf_margin[g.points[r]]);
                    gap = std::min(gap, rf_gap[g.points[r]]);
                }
            }
            margin_next[p] = std::min(m, first ? m : rf_margin[p]);
            gap_next[p] = std::min(gap, first ? gap : rf_gap[p]);
        }
        rf_margin = std::move(margin_next);
        rf_gap = std::move(gap_next);
        if (options.keep_trace) {
            HopTrace t;
            t.points = g.points;
            t.neighbors.resize(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                for (auto r : g.neighbor_rows[i]) t.neighbors[i].push_back(g.points[r]);
            }
            fs.trace.push_back(std::move(t));
        }
    };

    HopGeometry geom = hop_geometry(pc, nullptr, hops[0]);
    note(geom, true);
    Eigen::MatrixXd values;
    std::vector<std::size_t> channels;
    {
        const Eigen::MatrixXd y = saab_apply_rows(model.hop1_layer, hop1_attributes(pc, geom));
        std::vector<Eigen::Index> cols;
        for (std::size_t id : children[0]) {
            if (nodes[id].status == NodeStatus::discarded) continue;
            channels.push_back(id);
            cols.push_back(static_cast<Eigen::Index>(nodes[id].channel));
        }
        values = y(Eigen::all, cols);
    }

    for (std::size_t h = 2; h <= num_hops; ++h) {
        HopGeometry next = hop_geometry(pc, &geom, hops[h - 1]);
        note(next, false);
        const auto& layers = model.later_hops.at(h - 2);
        std::vector<Eigen::VectorXd> columns;
        std::vector<std::size_t> next_channels;
        for (std::size_t col = 0; col < channels.size(); ++col) {
            const SaabLayer& layer = layers.at(channels[col]);
            const Eigen::MatrixXd a = channel_attributes(next, values, static_cast<Eigen::Index>(col));
            for (std::size_t id : children[channels[col]]) {
                if (nodes[id].status == NodeStatus::discarded) continue;
                const Eigen::VectorXd filter =
                    layer.filters.row(static_cast<Eigen::Index>(nodes[id].channel)).transpose();
                columns.push_back((a * filter).array() + layer.bias);
                next_channels.push_back(id);
            }
        }
        values = assemble(columns, static_cast<Eigen::Index>(next.size()));
        channels = std::move(next_channels);
        geom = std::move(next);
    }

    fs.features = std::move(values);
    fs.point_indices.reserve(geom.size());
    for (std::size_t p : geom.points) {
        const std::size_t input = pc.sampled[p];
        fs.point_indices.push_back(input);
        fs.coords.push_back(cloud.point(input));
        fs.sign_margin.push_back(rf_margin[p]);
        fs.eigen_gap.push_back(rf_gap[p]);
    }
    return fs;
}

}  // namespace rpointhop
