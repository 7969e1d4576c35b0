#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <sstream>
#include <stdexcept>

#include "rpointhop/errors.h"
#include "rpointhop/pipeline.h"

namespace rpointhop {

namespace {

constexpr char kMagic[4] = {'R', 'P', 'H', '1'};

std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(bytes[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Writer {
public:
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void layer(const SaabLayer& l) {
        u64(l.input_dim);
        u64(l.kept_dim);
        f64(l.bias);
        for (Eigen::Index k = 0; k < l.energies.size(); ++k) f64(l.energies(k));
        for (Eigen::Index r = 0; r < l.filters.rows(); ++r)
            for (Eigen::Index c = 0; c < l.filters.cols(); ++c) f64(l.filters(r, c));
    }

    std::string& bytes() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

    void need(std::size_t n) const {
        if (n > end_ - pos_) throw ModelFormatError("corrupt model file: unexpected end of data");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }

    /// A count whose elements occupy at least `min_bytes` each.
    std::size_t count(std::size_t min_bytes) {
        const std::uint64_t n = u64();
        if (min_bytes > 0 && n > (end_ - pos_) / min_bytes) throw ModelFormatError("corrupt model file: bad count");
        return static_cast<std::size_t>(n);
    }

    SaabLayer layer() {
        SaabLayer l;
        l.input_dim = count(8);
        l.kept_dim = static_cast<std::size_t>(u64());
        if (l.input_dim == 0 || l.kept_dim == 0 || l.kept_dim > l.input_dim) {
            throw ModelFormatError("corrupt model file: bad layer shape");
        }
        need(8 * (1 + l.input_dim + l.kept_dim * l.input_dim));
        l.bias = f64();
        l.energies.resize(static_cast<Eigen::Index>(l.input_dim));
        for (Eigen::Index k = 0; k < l.energies.size(); ++k) l.energies(k) = f64();
        l.filters.resize(static_cast<Eigen::Index>(l.kept_dim), static_cast<Eigen::Index>(l.input_dim));
        for (Eigen::Index r = 0; r < l.filters.rows(); ++r)
            for (Eigen::Index c = 0; c < l.filters.cols(); ++c) l.filters(r, c) = f64();
        return l;
    }

    bool done() const { return pos_ == end_; }

private:
    const std::string& bytes_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_model(const RPointHopModel& model) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(RPointHopModel::kFormatVersion);

    const ModelConfig& c = model.config;
    w.u64(c.k_lrf);
    w.u64(c.hops.size());
    for (const auto& hop : c.hops) {
        w.u64(hop.num_points);
        w.u64(hop.k_neighbors);
    }
    w.f64(c.energy_threshold);
    w.f64(c.energy_keep);
    w.u8(c.use_aux_attributes ? 1 : 0);
    w.u8(c.normalize ? 1 : 0);
    w.u64(c.seed);
    w.u64(model.aux_width);

    const auto& nodes = model.tree.nodes();
    w.u64(nodes.size());
    for (const auto& n : nodes) {
        w.u32(n.hop);
        w.i64(n.parent);
        w.u32(n.channel);
        w.f64(n.energy);
        w.u8(static_cast<std::uint8_t>(n.status));
    }

    w.layer(model.hop1_layer);
    w.u64(model.later_hops.size());
    for (const auto& hop : model.later_hops) {
        w.u64(hop.size());
        for (const auto& [node, layer] : hop) {
            w.u64(node);
            w.layer(layer);
        }
    }
    w.u64(fnv1a(w.bytes(), w.bytes().size()));
    return std::move(w.bytes());
}

RPointHopModel deserialize_model(const std::string& bytes) {
    if (bytes.size() < 16) throw ModelFormatError("corrupt model file: too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw ModelFormatError("not a model file (bad magic)");
    Reader header(bytes, bytes.size());
    for (int i = 0; i < 4; ++i) header.u8();
    const std::uint32_t version = header.u32();
    if (version != RPointHopModel::kFormatVersion) {
        throw ModelFormatError("unsupported model format version " + std::to_string(version) + " (expected " +
                               std::to_string(RPointHopModel::kFormatVersion) + ")");
    }
    const std::size_t body_end = bytes.size() - 8;
    Reader trailer(bytes, bytes.size());
    for (std::size_t i = 0; i < body_end; ++i) trailer.u8();
    if (trailer.u64() != fnv1a(bytes, body_end)) throw ModelFormatError("corrupt model file: checksum mismatch");

    Reader r(bytes, body_end);
    for (int i = 0; i < 8; ++i) r.u8();
    RPointHopModel model;
    ModelConfig& c = model.config;
    c.k_lrf = static_cast<std::size_t>(r.u64());
    c.hops.resize(r.count(16));
    for (auto& hop : c.hops) {
        hop.num_points = static_cast<std::size_t>(r.u64());
        hop.k_neighbors = static_cast<std::size_t>(r.u64());
    }
    c.energy_threshold = r.f64();
    c.energy_keep = r.f64();
    c.use_aux_attributes = r.u8() != 0;
    c.normalize = r.u8() != 0;
    c.seed = r.u64();
    model.aux_width = static_cast<std::size_t>(r.u64());
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ModelFormatError(std::string("corrupt model file: ") + e.what());
    }

    std::vector<TreeNode> nodes(r.count(25));
    for (auto& n : nodes) {
        n.hop = r.u32();
        n.parent = r.i64();
        n.channel = r.u32();
        n.energy = r.f64();
        n.status = static_cast<NodeStatus>(r.u8());
    }
    try {
        model.tree = FeatureTree::from_nodes(std::move(nodes));
    } catch (const std::invalid_argument& e) {
        throw ModelFormatError(std::string("corrupt model file: ") + e.what());
    }

    model.hop1_layer = r.layer();
    if (model.hop1_layer.input_dim != 24 + model.aux_width) {
        throw ModelFormatError("corrupt model file: hop-1 layer width mismatch");
    }
    model.later_hops.resize(r.count(8));
    if (model.later_hops.size() + 1 != c.hops.size()) throw ModelFormatError("corrupt model file: hop count mismatch");
    for (auto& hop : model.later_hops) {
        const std::size_t n = r.count(16);
        for (std::size_t i = 0; i < n; ++i) {
            const ChannelId node = r.u64();
            SaabLayer layer = r.layer();
            if (node >= model.tree.size() || layer.input_dim != 8) {
                throw ModelFormatError("corrupt model file: bad channel layer");
            }
            hop.emplace(node, std::move(layer));
        }
    }
    if (!r.done()) throw ModelFormatError("corrupt model file: trailing data");
    return model;
}

void save_model(const RPointHopModel& model, const std::string& path) {
    const std::string bytes = serialize_model(model);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("failed writing '" + path + "'");
}

RPointHopModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model '" + path + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::size_t> parse_list(const std::string& value, const std::string& origin, std::size_t line) {
    std::vector<std::size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        std::size_t pos = 0;
        try {
            const long long v = std::stoll(item, &pos);
            if (pos != item.size() || v < 0) throw std::invalid_argument(item);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ParseError(origin, line, "invalid count '" + item + "'");
        }
    }
    return out;
}

}  // namespace

ModelConfig parse_config(const std::string& text, const std::string& origin) {
    ModelConfig config;
    std::vector<std::size_t> num_points, k_neighbors;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(origin, line_no, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        auto as_bool = [&]() {
            if (value == "true" || value == "1") return true;
            if (value == "false" || value == "0") return false;
            throw ParseError(origin, line_no, "invalid boolean '" + value + "'");
        };
        auto as_double = [&]() {
            std::size_t pos = 0;
            try {
                const double v = std::stod(value, &pos);
                if (pos == value.size()) return v;
            } catch (const std::exception&) {
            }
            throw ParseError(origin, line_no, "invalid number '" + value + "'");
        };
        if (key == "k_lrf") {
            const auto v = parse_list(value, origin, line_no);
            if (v.size() != 1) throw ParseError(origin, line_no, "k_lrf takes one value");
            config.k_lrf = v[0];
        } else if (key == "num_points") {
            num_points = parse_list(value, origin, line_no);
        } else if (key == "k_neighbors") {
            k_neighbors = parse_list(value, origin, line_no);
        } else if (key == "energy_threshold") {
            config.energy_threshold = as_double();
        } else if (key == "energy_keep") {
            config.energy_keep = as_double();
        } else if (key == "use_aux_attributes") {
            config.use_aux_attributes = as_bool();
        } else if (key == "normalize") {
            config.normalize = as_bool();
        } else if (key == "seed") {
            const auto v = parse_list(value, origin, line_no);
            if (v.size() != 1) throw ParseError(origin, line_no, "seed takes one value");
            config.seed = v[0];
        } else {
            throw ParseError(origin, line_no, "unknown key '" + key + "'");
        }
    }
    if (!num_points.empty() || !k_neighbors.empty()) {
        if (num_points.size() != k_neighbors.size()) {
            throw ParseError(origin, line_no, "num_points and k_neighbors must list the same number of hops");
        }
        config.hops.clear();
        for (std::size_t h = 0; h < num_points.size(); ++h) config.hops.push_back({num_points[h], k_neighbors[h]});
    }
    config.validate();
    return config;
}

ModelConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

std::string format_config(const ModelConfig& config) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "k_lrf = " << config.k_lrf << '\n';
    out << "num_points = ";
    for (std::size_t h = 0; h < config.hops.size(); ++h) out << (h ? "," : "") << config.hops[h].num_points;
    out << "\nk_neighbors = ";
    for (std::size_t h = 0; h < config.hops.size(); ++h) out << (h ? "," : "") << config.hops[h].k_neighbors;
    out << "\nenergy_threshold = " << config.energy_threshold << '\n';
    out << "energy_keep = " << config.energy_keep << '\n';
    out << "use_aux_attributes = " << (config.use_aux_attributes ? "true" : "false") << '\n';
    out << "normalize = " << (config.normalize ? "true" : "false") << '\n';
    out << "seed = " << config.seed << '\n';
    return out.str();
}

}  // namespace rpointhop
