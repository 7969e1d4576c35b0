#include "rpointhop/saab.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace rpointhop {

namespace {

// Orthonormal basis (columns) of the complement of the DC direction, taken
// from the Householder reflection that maps e_0 onto the DC filter.
Eigen::MatrixXd ac_basis(Eigen::Index n) {
    const Eigen::VectorXd dc = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
    Eigen::VectorXd u = dc;
    u(0) -= 1.0;
    Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
    const double uu = u.squaredNorm();
    if (uu > 0.0) h -= (2.0 / uu) * u * u.transpose();
    return h.rightCols(n - 1);
}

// Deterministic sign: the largest-magnitude entry is positive.
void orient(Eigen::Ref<Eigen::VectorXd> v) {
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
}

}  // namespace

SaabLayer saab_fit(const Eigen::MatrixXd& samples, const SaabFitParams& params) {
    const Eigen::Index n = samples.rows();
    const Eigen::Index dim = samples.cols();
    if (n < 2) throw std::invalid_argument("saab_fit needs at least 2 samples, got " + std::to_string(n));
    if (dim < 1) throw std::invalid_argument("saab_fit: zero-width samples");
    if (!samples.allFinite()) throw std::invalid_argument("saab_fit: samples contain non-finite values");
    if (!(params.energy_keep > 0.0 && params.energy_keep <= 1.0)) {
        throw std::invalid_argument("saab_fit: energy_keep must lie in (0, 1]");
    }

    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dim));
    const Eigen::VectorXd dc_filter = Eigen::VectorXd::Constant(dim, inv_sqrt);
    const Eigen::VectorXd dc = samples * dc_filter;
    const double dc_mean = dc.mean();
    const double dc_var = (dc.array() - dc_mean).square().sum() / static_cast<double>(n);

    Eigen::MatrixXd spectrum_filters(dim, dim);
    spectrum_filters.row(0) = dc_filter.transpose();
    Eigen::VectorXd variances = Eigen::VectorXd::Zero(dim);
    variances(0) = dc_var;

    if (dim > 1) {
        // AC part v - (a_0^T v) a_0 expressed in coordinates of the complement basis.
        const Eigen::MatrixXd basis = ac_basis(dim);
        Eigen::MatrixXd coords = samples * basis;
        const Eigen::RowVectorXd mean = coords.colwise().mean();
        coords.rowwise() -= mean;
        const Eigen::MatrixXd cov = (coords.transpose() * coords) / static_cast<double>(n);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        if (solver.info() != Eigen::Success) throw std::runtime_error("saab_fit: eigensolver failed");
        const Eigen::Index m = dim - 1;
        for (Eigen::Index k = 0; k < m; ++k) {
            const Eigen::Index src = m - 1 - k;  // ascending -> descending
            Eigen::VectorXd filter = basis * solver.eigenvectors().col(src);
            filter.normalize();
            orient(filter);
            spectrum_filters.row(k + 1) = filter.transpose();
            variances(k + 1) = std::max(0.0, solver.eigenvalues()(src));
        }
    }

    SaabLayer layer;
    layer.input_dim = static_cast<std::size_t>(dim);
    const double total = variances.sum();
    if (total > 0.0) {
        layer.energies = variances / total;
    } else {
        layer.energies = Eigen::VectorXd::Zero(dim);
        layer.energies(0) = 1.0;
    }

    std::size_t keep = layer.input_dim;
    double cumulative = 0.0;
    for (std::size_t k = 0; k < layer.input_dim; ++k) {
        cumulative += layer.energy(k);
        if (cumulative >= params.energy_keep - 1e-12) {
            keep = k + 1;
            break;
        }
    }
    if (params.max_dims > 0) keep = std::min(keep, params.max_dims);
    layer.kept_dim = keep;
    layer.filters = spectrum_filters.topRows(static_cast<Eigen::Index>(keep));
    layer.bias = samples.rowwise().norm().maxCoeff();
    return layer;
}

Eigen::VectorXd saab_apply(const SaabLayer& layer, const Eigen::VectorXd& v) {
    if (static_cast<std::size_t>(v.size()) != layer.input_dim) {
        throw std::invalid_argument("saab_apply: input has dimension " + std::to_string(v.size()) + ", layer expects " +
                                    std::to_string(layer.input_dim));
    }
    return (layer.filters * v).array() + layer.bias;
}

Eigen::MatrixXd saab_apply_rows(const SaabLayer& layer, const Eigen::MatrixXd& samples) {
    if (static_cast<std::size_t>(samples.cols()) != layer.input_dim) {
        throw std::invalid_argument("saab_apply: input has dimension " + std::to_string(samples.cols()) +
                                    ", layer expects " + std::to_string(layer.input_dim));
    }
    Eigen::MatrixXd out = samples * layer.filters.transpose();
    out.array() += layer.bias;
    return out;
}

std::map<ChannelId, SaabLayer> cw_saab_fit(const std::map<ChannelId, Eigen::MatrixXd>& per_channel_samples,
                                           const SaabFitParams& params) {
    std::map<ChannelId, SaabLayer> out;
    for (const auto& [channel, samples] : per_channel_samples) {
        try {
            out.emplace(channel, saab_fit(samples, params));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("channel " + std::to_string(channel) + ": " + e.what());
        }
    }
    return out;
}

FeatureTree::FeatureTree() { nodes_.push_back(TreeNode{}); }

std::vector<std::size_t> FeatureTree::add_children(std::size_t parent, std::uint32_t hop,
                                                   const std::vector<double>& fractions, double threshold,
                                                   bool final_hop) {
    if (parent >= nodes_.size()) throw std::out_of_range("add_children: unknown parent node");
    if (threshold < 0.0) throw std::invalid_argument("energy threshold must be non-negative");
    for (double f : fractions) {
        if (!(f >= 0.0)) throw std::invalid_argument("negative or NaN energy fraction");
    }
    const double parent_energy = nodes_[parent].energy;
    std::vector<std::size_t> ids;
    ids.reserve(fractions.size());
    for (std::size_t c = 0; c < fractions.size(); ++c) {
        TreeNode node;
        node.hop = hop;
        node.parent = static_cast<std::int64_t>(parent);
        node.channel = static_cast<std::uint32_t>(c);
        node.energy = parent_energy * fractions[c];
        if (node.energy > threshold) {
            node.status = final_hop ? NodeStatus::output : NodeStatus::intermediate;
        } else {
            node.status = NodeStatus::discarded;
        }
        ids.push_back(nodes_.size());
        nodes_.push_back(node);
    }
    return ids;
}

std::vector<std::size_t> FeatureTree::nodes_at(std::uint32_t hop, NodeStatus status) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].hop == hop && nodes_[i].status == status && i != 0) out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> FeatureTree::output_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].status == NodeStatus::output) out.push_back(i);
    }
    return out;
}

FeatureTree FeatureTree::from_nodes(std::vector<TreeNode> nodes) {
    if (nodes.empty() || nodes[0].parent != -1) throw std::invalid_argument("feature tree must start with a root");
    for (std::size_t i = 1; i < nodes.size(); ++i) {
        const auto p = nodes[i].parent;
        if (p < 0 || static_cast<std::size_t>(p) >= i) throw std::invalid_argument("feature tree: bad parent link");
        if (static_cast<std::uint8_t>(nodes[i].status) > 2) throw std::invalid_argument("feature tree: bad status");
    }
    FeatureTree t;
    t.nodes_ = std::move(nodes);
    return t;
}

std::vector<std::size_t> propagate_energy(FeatureTree& tree, std::size_t parent, std::uint32_t hop,
                                          const std::vector<double>& fractions, double threshold, bool final_hop) {
    return tree.add_children(parent, hop, fractions, threshold, final_hop);
}

}  // namespace rpointhop
