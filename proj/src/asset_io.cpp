#include <charconv>
#include <cstdio>
#include <sstream>

#include "featsplat/asset.hpp"
#include "featsplat/binary.hpp"

namespace fsplat {

namespace {

std::string fmt9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

double parse_double(const std::string& tok, int line) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw IoError("asset mesh line " + std::to_string(line) + ": bad number \"" + tok + "\"");
    return v;
}

int parse_int(const std::string& tok, int line) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw IoError("asset mesh line " + std::to_string(line) + ": bad integer \"" + tok + "\"");
    return v;
}

void write_matrix_rows(ByteWriter& w, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(m(r, c));
}

Eigen::MatrixXd read_matrix_rows(ByteReader& r, Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(r.f32());
    return m;
}

}  // namespace

std::filesystem::path asset_sidecar_path(const std::filesystem::path& mesh_path) {
    std::filesystem::path p = mesh_path;
    p.replace_extension(".gpa");
    return p;
}

std::string serialize_asset_mesh(const BodyAsset& asset) {
    std::ostringstream os;
    os << "# featsplat body asset\n";
    for (int v = 0; v < asset.num_vertices(); ++v)
        os << "v " << fmt9(asset.template_vertices(v, 0)) << ' ' << fmt9(asset.template_vertices(v, 1)) << ' '
           << fmt9(asset.template_vertices(v, 2)) << '\n';
    for (const FaceUv& uv : asset.uv_corners)
        for (const auto& c : uv) os << "vt " << fmt9(c.x()) << ' ' << fmt9(c.y()) << '\n';
    for (std::size_t f = 0; f < asset.faces.size(); ++f) {
        os << 'f';
        for (int k = 0; k < 3; ++k)
            os << ' ' << asset.faces[f][static_cast<std::size_t>(k)] + 1 << '/' << 3 * f + static_cast<std::size_t>(k) + 1;
        os << '\n';
    }
    for (int j = 0; j < asset.num_joints(); ++j) {
        const auto ju = static_cast<std::size_t>(j);
        const std::string name = ju < asset.joint_names.size() ? asset.joint_names[ju] : "joint" + std::to_string(j);
        os << "j " << name << ' ' << asset.parent[ju] << '\n';
    }
    return os.str();
}

std::string serialize_asset_sidecar(const BodyAsset& asset) {
    ByteWriter w;
    w.magic("GPA1");
    w.u32(static_cast<std::uint32_t>(asset.num_vertices()));
    w.u32(static_cast<std::uint32_t>(asset.num_faces()));
    w.u32(static_cast<std::uint32_t>(asset.num_joints()));
    w.u32(static_cast<std::uint32_t>(asset.num_betas()));
    w.u32(static_cast<std::uint32_t>(asset.num_expressions()));
    w.u32(static_cast<std::uint32_t>(asset.num_pose_features()));
    // Bases are V x 3 x N row-major, which is exactly our 3V x N row order.
    write_matrix_rows(w, asset.shape_basis);
    write_matrix_rows(w, asset.expression_basis);
    write_matrix_rows(w, asset.pose_basis);
    write_matrix_rows(w, asset.joint_regressor);
    write_matrix_rows(w, asset.skinning_weights);
    return w.take();
}

BodyAsset parse_body_asset(const std::string& mesh_text, const std::string& sidecar_bytes) {
    BodyAsset asset;
    std::vector<Eigen::Vector3d> positions;
    std::vector<Eigen::Vector2d> uvs;
    std::vector<std::array<std::pair<int, int>, 3>> face_refs;

    std::istringstream is(mesh_text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        std::vector<std::string> toks;
        for (std::string t; ls >> t;) toks.push_back(t);
        if (tag == "v") {
            if (toks.size() != 3) throw IoError("asset mesh line " + std::to_string(line_no) + ": expected 3 coords");
            positions.emplace_back(parse_double(toks[0], line_no), parse_double(toks[1], line_no),
                                   parse_double(toks[2], line_no));
        } else if (tag == "vt") {
            if (toks.size() != 2) throw IoError("asset mesh line " + std::to_string(line_no) + ": expected 2 coords");
            uvs.emplace_back(parse_double(toks[0], line_no), parse_double(toks[1], line_no));
        } else if (tag == "f") {
            if (toks.size() != 3) throw IoError("asset mesh line " + std::to_string(line_no) + ": faces must be triangles");
            std::array<std::pair<int, int>, 3> ref{};
            for (std::size_t k = 0; k < 3; ++k) {
                const auto slash = toks[k].find('/');
                if (slash == std::string::npos)
                    throw IoError("asset mesh line " + std::to_string(line_no) + ": face corners need v/vt");
                ref[k] = {parse_int(toks[k].substr(0, slash), line_no) - 1,
                          parse_int(toks[k].substr(slash + 1), line_no) - 1};
            }
            face_refs.push_back(ref);
        } else if (tag == "j") {
            if (toks.size() != 2) throw IoError("asset mesh line " + std::to_string(line_no) + ": expected name parent");
            asset.joint_names.push_back(toks[0]);
            asset.parent.push_back(parse_int(toks[1], line_no));
        } else {
            throw IoError("asset mesh line " + std::to_string(line_no) + ": unknown record \"" + tag + "\"");
        }
    }

    const auto nv = static_cast<Eigen::Index>(positions.size());
    asset.template_vertices.resize(nv, 3);
    for (Eigen::Index i = 0; i < nv; ++i) asset.template_vertices.row(i) = positions[static_cast<std::size_t>(i)];
    for (const auto& ref : face_refs) {
        Face f{};
        FaceUv uv{};
        for (std::size_t k = 0; k < 3; ++k) {
            f[k] = ref[k].first;
            const int t = ref[k].second;
            if (t < 0 || static_cast<std::size_t>(t) >= uvs.size()) throw IoError("asset mesh: UV index out of range");
            uv[k] = uvs[static_cast<std::size_t>(t)];
        }
        asset.faces.push_back(f);
        asset.uv_corners.push_back(uv);
    }

    ByteReader r(sidecar_bytes, "asset sidecar");
    r.expect_magic("GPA1");
    const auto v = static_cast<Eigen::Index>(r.u32());
    const auto f = static_cast<Eigen::Index>(r.u32());
    const auto j = static_cast<Eigen::Index>(r.u32());
    const auto nb = static_cast<Eigen::Index>(r.u32());
    const auto ne = static_cast<Eigen::Index>(r.u32());
    const auto np = static_cast<Eigen::Index>(r.u32());
    if (v != nv || f != static_cast<Eigen::Index>(asset.faces.size()) ||
        j != static_cast<Eigen::Index>(asset.parent.size()))
        throw IoError("asset sidecar dimensions disagree with the mesh section");
    const std::size_t expected =
        4u * static_cast<std::size_t>(3 * v * (nb + ne + np) + j * v + v * j);
    if (r.remaining() != expected) throw IoError("asset sidecar payload has the wrong length");
    asset.shape_basis = read_matrix_rows(r, 3 * v, nb);
    asset.expression_basis = read_matrix_rows(r, 3 * v, ne);
    asset.pose_basis = read_matrix_rows(r, 3 * v, np);
    asset.joint_regressor = read_matrix_rows(r, j, v);
    asset.skinning_weights = read_matrix_rows(r, v, j);
    // float32 storage loses the exact partition of unity; restore it.
    for (Eigen::Index i = 0; i < v; ++i) {
        const double s = asset.skinning_weights.row(i).sum();
        if (s > 0.0) asset.skinning_weights.row(i) /= s;
    }
    asset.validate();
    return asset;
}

void save_body_asset(const BodyAsset& asset, const std::filesystem::path& mesh_path) {
    write_file_atomic(mesh_path, serialize_asset_mesh(asset));
    write_file_atomic(asset_sidecar_path(mesh_path), serialize_asset_sidecar(asset));
}

BodyAsset load_body_asset(const std::filesystem::path& mesh_path) {
    return parse_body_asset(read_file(mesh_path), read_file(asset_sidecar_path(mesh_path)));
}

}  // namespace fsplat
