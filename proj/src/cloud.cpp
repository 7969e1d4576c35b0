#include "rpointhop/cloud.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <boost/random/uniform_int_distribution.hpp>
#include <spdlog/spdlog.h>

#include "rpointhop/errors.h"
#include "rpointhop/random.h"

namespace rpointhop {

PointCloud::PointCloud(Points coords, Eigen::MatrixXd aux)
    : coords_(std::move(coords)), aux_(std::move(aux)) {
    if (coords_.empty()) throw std::invalid_argument("point cloud must contain at least one point");
    for (const auto& p : coords_) {
        if (!p.allFinite()) throw std::invalid_argument("point cloud contains a non-finite coordinate");
    }
    if (aux_.size() > 0 && static_cast<std::size_t>(aux_.rows()) != coords_.size()) {
        throw std::invalid_argument("aux attribute rows do not match point count");
    }
    if (aux_.size() == 0) aux_.resize(0, 0);
}

PointCloud PointCloud::select(const std::vector<std::size_t>& indices) const {
    Points out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(coords_.at(i));
    Eigen::MatrixXd aux;
    if (has_aux()) {
        aux.resize(static_cast<Eigen::Index>(indices.size()), aux_.cols());
        for (std::size_t r = 0; r < indices.size(); ++r) {
            aux.row(static_cast<Eigen::Index>(r)) = aux_.row(static_cast<Eigen::Index>(indices[r]));
        }
    }
    return PointCloud(std::move(out), std::move(aux));
}

bool RigidTransform::is_valid(double tol) const {
    const Eigen::Matrix3d gram = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return gram.cwiseAbs().maxCoeff() < tol && std::abs(rotation.determinant() - 1.0) < tol &&
           translation.allFinite();
}

CloudFormat parse_cloud_format(const std::string& name) {
    std::string s = name;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    if (!s.empty() && s.front() == '.') s.erase(0, 1);
    if (s == "off") return CloudFormat::off;
    if (s == "ply" || s == "ply-ascii" || s == "ply_ascii") return CloudFormat::ply_ascii;
    if (s == "xyz" || s == "txt" || s == "pts") return CloudFormat::xyz;
    throw std::invalid_argument("unknown point cloud format '" + name + "'");
}

CloudFormat format_from_extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) throw std::invalid_argument("cannot infer format of '" + path + "'");
    return parse_cloud_format(path.substr(dot + 1));
}

namespace {

class LineReader {
public:
    explicit LineReader(const std::string& path) : path_(path), in_(path) {
        if (!in_) throw IoError("cannot open '" + path + "' for reading");
    }

    /// Next non-blank line that is not a '#' comment.
    bool next(std::string& line) {
        while (std::getline(in_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto first = line.find_first_not_of(" \t");
            if (first == std::string::npos || line[first] == '#') continue;
            return true;
        }
        return false;
    }

    std::size_t line_no() const { return line_no_; }
    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, line_no_, what); }

private:
    std::string path_;
    std::ifstream in_;
    std::size_t line_no_ = 0;
};

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> tokens;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    return tokens;
}

double parse_double(const LineReader& r, const std::string& tok) {
    double v = 0.0;
    const char* begin = tok.data();
    const char* end = tok.data() + tok.size();
    if (!tok.empty() && *begin == '+') ++begin;
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) r.fail("non-numeric token '" + tok + "'");
    return v;
}

std::size_t parse_count(const LineReader& r, const std::string& tok) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) r.fail("invalid count '" + tok + "'");
    return v;
}

PointCloud load_off(const std::string& path) {
    LineReader r(path);
    std::string line;
    if (!r.next(line)) r.fail("empty file, expected OFF header");
    auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0] != "OFF") r.fail("malformed header, expected 'OFF'");
    tokens.erase(tokens.begin());
    if (tokens.empty()) {
        if (!r.next(line)) r.fail("missing vertex/face count line");
        tokens = split_ws(line);
    }
    if (tokens.size() < 1 || tokens.size() > 3) r.fail("malformed count line");
    const std::size_t n = parse_count(r, tokens[0]);
    Points pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!r.next(line)) r.fail("point count mismatch: header declares " + std::to_string(n) +
                                  " vertices, file has " + std::to_string(i));
        auto t = split_ws(line);
        if (t.size() < 3) r.fail("vertex line needs 3 coordinates");
        pts.emplace_back(parse_double(r, t[0]), parse_double(r, t[1]), parse_double(r, t[2]));
    }
    // Face records, if any, are ignored.
    if (pts.empty()) r.fail("OFF file declares zero vertices");
    return PointCloud(std::move(pts));
}

PointCloud load_ply(const std::string& path) {
    LineReader r(path);
    std::string line;
    if (!r.next(line) || split_ws(line) != std::vector<std::string>{"ply"}) {
        r.fail("malformed header, expected 'ply'");
    }
    struct Element {
        std::string name;
        std::size_t count;
        std::vector<std::string> props;
    };
    std::vector<Element> elements;
    bool ascii = false;
    bool ended = false;
    while (r.next(line)) {
        auto t = split_ws(line);
        if (t[0] == "format") {
            if (t.size() < 2) r.fail("malformed format line");
            if (t[1] != "ascii") r.fail("only ASCII PLY is supported, got '" + t[1] + "'");
            ascii = true;
        } else if (t[0] == "comment" || t[0] == "obj_info") {
            continue;
        } else if (t[0] == "element") {
            if (t.size() != 3) r.fail("malformed element line");
            elements.push_back({t[1], parse_count(r, t[2]), {}});
        } else if (t[0] == "property") {
            if (elements.empty()) r.fail("property before any element");
            if (t.size() < 3) r.fail("malformed property line");
            if (t[1] == "list") {
                if (t.size() != 5) r.fail("malformed list property");
                if (elements.back().name == "vertex") r.fail("list properties on vertices are not supported");
            }
            elements.back().props.push_back(t.back());
        } else if (t[0] == "end_header") {
            ended = true;
            break;
        } else {
            r.fail("unexpected header keyword '" + t[0] + "'");
        }
    }
    if (!ascii) r.fail("missing 'format ascii 1.0' line");
    if (!ended) r.fail("missing end_header");

    Points pts;
    std::vector<Eigen::Vector3d> normals;
    bool seen_vertex = false;
    for (const auto& el : elements) {
        if (el.name != "vertex") {
            for (std::size_t i = 0; i < el.count; ++i) {
                if (!r.next(line)) r.fail("point count mismatch in element '" + el.name + "'");
            }
            continue;
        }
        seen_vertex = true;
        auto find = [&](const char* name) -> long {
            auto it = std::find(el.props.begin(), el.props.end(), name);
            return it == el.props.end() ? -1 : static_cast<long>(it - el.props.begin());
        };
        const long ix = find("x"), iy = find("y"), iz = find("z");
        const long inx = find("nx"), iny = find("ny"), inz = find("nz");
        if (ix < 0 || iy < 0 || iz < 0) r.fail("vertex element lacks x/y/z properties");
        const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;
        for (std::size_t i = 0; i < el.count; ++i) {
            if (!r.next(line)) r.fail("point count mismatch: header declares " + std::to_string(el.count) +
                                      " vertices, file has " + std::to_string(i));
            auto t = split_ws(line);
            if (t.size() != el.props.size()) {
                r.fail("vertex row has " + std::to_string(t.size()) + " values, expected " +
                       std::to_string(el.props.size()));
            }
            std::vector<double> v(t.size());
            for (std::size_t k = 0; k < t.size(); ++k) v[k] = parse_double(r, t[k]);
            pts.emplace_back(v[ix], v[iy], v[iz]);
            if (has_normals) normals.emplace_back(v[inx], v[iny], v[inz]);
        }
    }
    if (!seen_vertex || pts.empty()) r.fail("PLY file has no vertices");
    Eigen::MatrixXd aux;
    if (!normals.empty()) {
        aux.resize(static_cast<Eigen::Index>(normals.size()), 3);
        for (std::size_t i = 0; i < normals.size(); ++i) aux.row(static_cast<Eigen::Index>(i)) = normals[i];
    }
    return PointCloud(std::move(pts), std::move(aux));
}

PointCloud load_xyz(const std::string& path) {
    LineReader r(path);
    std::string line;
    Points pts;
    std::vector<std::vector<double>> extra;
    std::size_t width = 0;
    while (r.next(line)) {
        auto t = split_ws(line);
        if (pts.empty()) {
            if (t.size() < 3) r.fail("row needs at least 3 columns");
            width = t.size();
        } else if (t.size() != width) {
            r.fail("row has " + std::to_string(t.size()) + " columns, expected " + std::to_string(width));
        }
        pts.emplace_back(parse_double(r, t[0]), parse_double(r, t[1]), parse_double(r, t[2]));
        if (width > 3) {
            std::vector<double> row;
            for (std::size_t k = 3; k < width; ++k) row.push_back(parse_double(r, t[k]));
            extra.push_back(std::move(row));
        }
    }
    if (pts.empty()) r.fail("xyz file has no points");
    Eigen::MatrixXd aux;
    if (width > 3) {
        aux.resize(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(width - 3));
        for (std::size_t i = 0; i < extra.size(); ++i) {
            for (std::size_t k = 0; k < width - 3; ++k) {
                aux(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = extra[i][k];
            }
        }
    }
    return PointCloud(std::move(pts), std::move(aux));
}

}  // namespace

PointCloud load_cloud(const std::string& path, CloudFormat format) {
    switch (format) {
        case CloudFormat::off: return load_off(path);
        case CloudFormat::ply_ascii: return load_ply(path);
        case CloudFormat::xyz: return load_xyz(path);
    }
    throw std::invalid_argument("unknown format");
}

PointCloud load_cloud(const std::string& path) { return load_cloud(path, format_from_extension(path)); }

void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << std::setprecision(17);
    const bool normals = cloud.has_aux() && cloud.aux_width() == 3;
    switch (format) {
        case CloudFormat::off:
            out << "OFF\n" << cloud.size() << " 0 0\n";
            for (const auto& p : cloud.coords()) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
            break;
        case CloudFormat::ply_ascii:
            out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
                << "\nproperty double x\nproperty double y\nproperty double z\n";
            if (normals) out << "property double nx\nproperty double ny\nproperty double nz\n";
            out << "end_header\n";
            for (std::size_t i = 0; i < cloud.size(); ++i) {
                const auto& p = cloud.point(i);
                out << p.x() << ' ' << p.y() << ' ' << p.z();
                if (normals) {
                    for (int k = 0; k < 3; ++k) out << ' ' << cloud.aux()(static_cast<Eigen::Index>(i), k);
                }
                out << '\n';
            }
            break;
        case CloudFormat::xyz:
            for (std::size_t i = 0; i < cloud.size(); ++i) {
                const auto& p = cloud.point(i);
                out << p.x() << ' ' << p.y() << ' ' << p.z();
                for (Eigen::Index k = 0; k < cloud.aux().cols(); ++k) {
                    out << ' ' << cloud.aux()(static_cast<Eigen::Index>(i), k);
                }
                out << '\n';
            }
            break;
    }
    out.flush();
    if (!out) throw IoError("failed writing '" + path + "'");
}

void save_cloud(const PointCloud& cloud, const std::string& path) {
    save_cloud(cloud, path, format_from_extension(path));
}

Normalization normalize_unit_sphere(const PointCloud& cloud) {
    Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
    for (const auto& p : cloud.coords()) centroid += p;
    centroid /= static_cast<double>(cloud.size());
    double radius = 0.0;
    for (const auto& p : cloud.coords()) radius = std::max(radius, (p - centroid).norm());
    double scale = radius;
    if (radius == 0.0) {
        if (cloud.size() > 1) spdlog::warn("normalize_unit_sphere: all {} points coincide; using scale 1", cloud.size());
        scale = 1.0;
    }
    Points out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.coords()) out.push_back((p - centroid) / scale);
    return {PointCloud(std::move(out), cloud.aux()), centroid, scale};
}

std::vector<std::size_t> random_sample_indices(std::size_t n, std::size_t m, std::uint64_t seed) {
    if (m < 1 || m > n) {
        throw std::invalid_argument("random_sample: requested " + std::to_string(m) + " of " +
                                    std::to_string(n) + " points");
    }
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        boost::random::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

PointCloud random_sample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
    return cloud.select(random_sample_indices(cloud.size(), m, seed));
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& tf) {
    Points out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.coords()) out.push_back(tf.rotation * p + tf.translation);
    return PointCloud(std::move(out), cloud.aux());
}

PointCloud align_inverse(const PointCloud& cloud, const RigidTransform& tf) {
    const Eigen::Matrix3d rt = tf.rotation.transpose();
    Points out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.coords()) out.push_back(rt * (p - tf.translation));
    return PointCloud(std::move(out), cloud.aux());
}

RigidTransform inverse(const RigidTransform& tf) {
    RigidTransform inv;
    inv.rotation = tf.rotation.transpose();
    inv.translation = -(inv.rotation * tf.translation);
    return inv;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    RigidTransform c;
    c.rotation = a.rotation * b.rotation;
    c.translation = a.rotation * b.translation + a.translation;
    return c;
}

std::string format_transform(const RigidTransform& tf) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "rotation:";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out << ' ' << tf.rotation(r, c);
    out << "\ntranslation:";
    for (int k = 0; k < 3; ++k) out << ' ' << tf.translation(k);
    out << '\n';
    return out.str();
}

void save_transform(const RigidTransform& tf, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << format_transform(tf);
    if (!out) throw IoError("failed writing '" + path + "'");
}

RigidTransform load_transform(const std::string& path) {
    LineReader r(path);
    std::string line;
    RigidTransform tf;
    bool have_r = false, have_t = false;
    while (r.next(line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        std::string key = line.substr(0, colon);
        key.erase(0, key.find_first_not_of(" \t"));
        key.erase(key.find_last_not_of(" \t") + 1);
        auto t = split_ws(line.substr(colon + 1));
        if (key == "rotation") {
            if (t.size() != 9) r.fail("rotation needs 9 numbers");
            for (int k = 0; k < 9; ++k) tf.rotation(k / 3, k % 3) = parse_double(r, t[static_cast<std::size_t>(k)]);
            have_r = true;
        } else if (key == "translation") {
            if (t.size() != 3) r.fail("translation needs 3 numbers");
            for (int k = 0; k < 3; ++k) tf.translation(k) = parse_double(r, t[static_cast<std::size_t>(k)]);
            have_t = true;
        }
    }
    if (!have_r || !have_t) r.fail("transform file needs 'rotation' and 'translation' keys");
    if (!tf.is_valid(1e-6)) r.fail("rotation is not a proper orthonormal matrix");
    return tf;
}

}  // namespace rpointhop
