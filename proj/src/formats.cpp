#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <algorithm>
#include <sstream>

#include "featsplat/io.hpp"

namespace fsplat {

namespace {

std::string fmt(double v, int digits) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.*g", digits, v);
    return buf;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    for (std::string line; std::getline(is, line);) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!trim(line).empty()) out.push_back(line);
    }
    return out;
}

double to_double(const std::string& tok, const std::string& context) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size()) throw IoError(context + ": bad number \"" + tok + "\"");
    return v;
}

long long to_int(const std::string& tok, const std::string& context) {
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
        throw IoError(context + ": bad integer \"" + tok + "\"");
    return v;
}

}  // namespace

// ---------------------------------------------------------------- tensors

std::size_t Tensor::count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::string serialize_tensor(const Tensor& t) {
    if (t.data.size() != t.count()) throw InvalidArgument("tensor payload does not match its dims");
    ByteWriter w;
    w.magic("NTF1");
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.data) w.u32(std::bit_cast<std::uint32_t>(v));
    return w.take();
}

Tensor parse_tensor(ByteReader& r) {
    r.expect_magic("NTF1");
    Tensor t;
    const std::uint32_t rank = r.u32();
    if (rank > 16) throw IoError(r.context() + ": implausible tensor rank " + std::to_string(rank));
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.dims.push_back(r.u32());
        count *= t.dims.back();
    }
    if (count * 4 > r.remaining()) throw IoError(r.context() + ": truncated tensor payload");
    t.data.resize(static_cast<std::size_t>(count));
    for (auto& v : t.data) v = r.f32();
    return t;
}

Tensor parse_tensor(const std::string& bytes, const std::string& context) {
    ByteReader r(bytes, context);
    Tensor t = parse_tensor(r);
    if (r.remaining() != 0) throw IoError(context + ": trailing bytes after tensor payload");
    return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) { write_file_atomic(path, serialize_tensor(t)); }

Tensor read_tensor(const std::filesystem::path& path) { return parse_tensor(read_file(path), path.string()); }

Tensor tensor_from(const double* data, std::vector<std::uint32_t> dims) {
    Tensor t;
    t.dims = std::move(dims);
    t.data.resize(t.count());
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(data[i]);
    return t;
}

Tensor tensor_from(const Image& img) {
    return tensor_from(img.data.data(), {static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.width),
                                         static_cast<std::uint32_t>(img.channels)});
}

Image image_from(const Tensor& t) {
    if (t.dims.size() != 3) throw IoError("image tensor must have rank 3");
    Image img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
    for (std::size_t i = 0; i < t.data.size(); ++i) img.data[i] = t.data[i];
    return img;
}

// ---------------------------------------------------------------- images

std::string encode_pnm(const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw InvalidArgument("PNM images need 1 or 3 channels");
    std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.data.size());
    for (double v : img.data) {
        const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0))));
    }
    return out;
}

Image decode_pnm(const std::string& bytes, const std::string& context) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (start == pos) throw IoError(context + ": truncated PNM header");
        return bytes.substr(start, pos - start);
    };
    const std::string magic = token();
    int channels = 0;
    if (magic == "P6") channels = 3;
    else if (magic == "P5") channels = 1;
    else throw IoError(context + ": not a binary PPM/PGM file");
    const long long w = to_int(token(), context), h = to_int(token(), context), maxval = to_int(token(), context);
    if (w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16) throw IoError(context + ": bad image dimensions");
    if (maxval != 255) throw IoError(context + ": only 8-bit images are supported");
    ++pos;  // single whitespace after maxval
    const std::size_t n = static_cast<std::size_t>(w * h * channels);
    if (bytes.size() < pos || bytes.size() - pos != n) throw IoError(context + ": payload size does not match header");
    Image img(static_cast<int>(h), static_cast<int>(w), channels);
    for (std::size_t i = 0; i < n; ++i) img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    return img;
}

void write_image(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, encode_pnm(img)); }

Image read_image(const std::filesystem::path& path) { return decode_pnm(read_file(path), path.string()); }

// ---------------------------------------------------------------- tracks

namespace {

std::vector<std::string> track_header(const BodyAsset& asset) {
    std::vector<std::string> h{"frame"};
    for (int b = 0; b < asset.num_betas(); ++b) h.push_back("beta_" + std::to_string(b));
    for (int j = 0; j < asset.num_joints(); ++j)
        for (const char* ax : {"x", "y", "z"}) h.push_back("theta_" + std::to_string(j) + "_" + ax);
    for (int e = 0; e < asset.num_expressions(); ++e) h.push_back("psi_" + std::to_string(e));
    for (const char* ax : {"x", "y", "z"}) h.push_back(std::string("trans_") + ax);
    return h;
}

}  // namespace

std::string format_track_csv(const BodyAsset& asset, const Track& track) {
    track.validate(asset);
    std::ostringstream os;
    const auto header = track_header(asset);
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    const ParamLayout layout(asset);
    for (int t = 0; t < track.size(); ++t) {
        const Eigen::VectorXd flat = layout.flatten(track.frames[static_cast<std::size_t>(t)]);
        os << t;
        for (Eigen::Index i = 0; i < flat.size(); ++i) os << ',' << fmt(flat(i), 9);
        os << '\n';
    }
    return os.str();
}

Track parse_track_csv(const BodyAsset& asset, const std::string& text) {
    const auto lines = lines_of(text);
    if (lines.empty()) throw IoError("track: empty file");
    if (split_csv(lines[0]) != track_header(asset)) throw IoError("track: header does not match the asset dimensions");
    const ParamLayout layout(asset);
    Track track;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto cells = split_csv(lines[l]);
        const std::string ctx = "track line " + std::to_string(l + 1);
        if (cells.size() != static_cast<std::size_t>(layout.size() + 1)) throw IoError(ctx + ": wrong column count");
        if (to_int(cells[0], ctx) != static_cast<long long>(l - 1)) throw IoError(ctx + ": frames must be consecutive from 0");
        Eigen::VectorXd flat(layout.size());
        for (int i = 0; i < layout.size(); ++i) flat(i) = to_double(cells[static_cast<std::size_t>(i + 1)], ctx);
        track.frames.push_back(layout.unflatten(flat));
    }
    try {
        track.validate(asset);
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("track: ") + e.what());
    }
    return track;
}

void write_track(const std::filesystem::path& path, const BodyAsset& asset, const Track& track) {
    write_file_atomic(path, format_track_csv(asset, track));
}

Track read_track(const std::filesystem::path& path, const BodyAsset& asset) {
    return parse_track_csv(asset, read_file(path));
}

// ---------------------------------------------------------------- cameras and landmarks

std::string format_cameras_csv(const std::vector<Camera>& cams) {
    std::ostringstream os;
    os << "frame,width,height,fx,fy,cx,cy,near,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n";
    for (std::size_t t = 0; t < cams.size(); ++t) {
        const Camera& c = cams[t];
        os << t << ',' << c.width << ',' << c.height;
        for (double v : {c.fx, c.fy, c.cx, c.cy, c.near}) os << ',' << fmt(v, 17);
        const Eigen::Matrix3d r = c.world_to_camera.linear();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) os << ',' << fmt(r(i, j), 17);
        for (int i = 0; i < 3; ++i) os << ',' << fmt(c.world_to_camera.translation()(i), 17);
        os << '\n';
    }
    return os.str();
}

std::vector<Camera> parse_cameras_csv(const std::string& text) {
    const auto lines = lines_of(text);
    if (lines.empty()) throw IoError("cameras: empty file");
    std::vector<Camera> cams;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto c = split_csv(lines[l]);
        const std::string ctx = "cameras line " + std::to_string(l + 1);
        if (c.size() != 20) throw IoError(ctx + ": expected 20 columns");
        Camera cam;
        cam.width = static_cast<int>(to_int(c[1], ctx));
        cam.height = static_cast<int>(to_int(c[2], ctx));
        cam.fx = to_double(c[3], ctx);
        cam.fy = to_double(c[4], ctx);
        cam.cx = to_double(c[5], ctx);
        cam.cy = to_double(c[6], ctx);
        cam.near = to_double(c[7], ctx);
        Eigen::Matrix3d r;
        for (int i = 0; i < 9; ++i) r(i / 3, i % 3) = to_double(c[static_cast<std::size_t>(8 + i)], ctx);
        cam.world_to_camera.linear() = r;
        for (int i = 0; i < 3; ++i) cam.world_to_camera.translation()(i) = to_double(c[static_cast<std::size_t>(17 + i)], ctx);
        try {
            cam.validate();
        } catch (const InvalidArgument& e) {
            throw IoError(ctx + ": " + e.what());
        }
        cams.push_back(cam);
    }
    return cams;
}

std::string format_landmarks_csv(const std::vector<int>& vertices, const Eigen::MatrixXd& obs) {
    if (obs.rows() != static_cast<Eigen::Index>(vertices.size()) || obs.cols() != 2)
        throw InvalidArgument("landmarks: observation shape does not match the vertex list");
    std::ostringstream os;
    os << "index,vertex,x,y\n";
    for (std::size_t i = 0; i < vertices.size(); ++i)
        os << i << ',' << vertices[i] << ',' << fmt(obs(static_cast<Eigen::Index>(i), 0), 17) << ','
           << fmt(obs(static_cast<Eigen::Index>(i), 1), 17) << '\n';
    return os.str();
}

void parse_landmarks_csv(const std::string& text, std::vector<int>& vertices, Eigen::MatrixXd& obs) {
    const auto lines = lines_of(text);
    if (lines.empty()) throw IoError("landmarks: empty file");
    vertices.clear();
    std::vector<Eigen::Vector2d> pts;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto c = split_csv(lines[l]);
        const std::string ctx = "landmarks line " + std::to_string(l + 1);
        if (c.size() != 4) throw IoError(ctx + ": expected 4 columns");
        vertices.push_back(static_cast<int>(to_int(c[1], ctx)));
        pts.emplace_back(to_double(c[2], ctx), to_double(c[3], ctx));
    }
    obs.resize(static_cast<Eigen::Index>(pts.size()), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) obs.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
}

// ---------------------------------------------------------------- config

Config Config::parse(const std::string& text, const std::string& source) {
    Config c;
    c.source_ = source;
    std::istringstream is(text);
    int line_no = 0;
    for (std::string line; std::getline(is, line);) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(line_no) + ": expected `key = value`");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
        c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
}

Config Config::load(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError&) {
        throw ConfigError("cannot read config file " + path.string());
    }
    return parse(text, path.string());
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (it->second.empty() || end != it->second.c_str() + it->second.size() || !std::isfinite(v))
        throw ConfigError(source_ + ": " + key + " must be a number, got \"" + it->second + "\"");
    return v;
}

long long Config::get_int(const std::string& key, long long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long long v = 0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError(source_ + ": " + key + " must be an integer, got \"" + s + "\"");
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::string v = it->second;
    for (char& ch : v) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
    if (v == "off" || v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(source_ + ": " + key + " must be on/off, got \"" + it->second + "\"");
}

void Config::require_known(const std::vector<std::string>& known) const {
    for (const auto& [k, v] : values_)
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError(source_ + ": unknown key \"" + k + "\"");
}

std::string Config::format() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

template <typename M>
Tensor matrix_tensor(const M& m) {
    const RowMatrix r = m;
    return tensor_from(r.data(), {static_cast<std::uint32_t>(r.rows()), static_cast<std::uint32_t>(r.cols())});
}

RowMatrix tensor_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols, const std::string& what) {
    const bool vec = cols == 1 && t.dims.size() == 1;
    if (!vec && (t.dims.size() != 2 || t.dims[0] != rows || t.dims[1] != cols))
        throw IoError(what + " has the wrong shape");
    if (vec && t.dims[0] != rows) throw IoError(what + " has the wrong length");
    RowMatrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = t.data[static_cast<std::size_t>(i)];
    return m;
}

Tensor vector_tensor(const Eigen::VectorXd& v) {
    return tensor_from(v.data(), {static_cast<std::uint32_t>(v.size())});
}

}  // namespace

std::string serialize_texture(const GaussianTexture& tex, const TemporalFeatures& temporal) {
    if (!tex.binding) throw InvalidArgument("texture has no binding");
    ByteWriter w;
    w.magic("GPT1");
    w.u64(tex.binding->topology_hash);
    w.u32(static_cast<std::uint32_t>(tex.resolution()));
    w.u32(static_cast<std::uint32_t>(tex.channels));
    w.u32(static_cast<std::uint32_t>(tex.size()));
    w.u32(static_cast<std::uint32_t>(temporal.frames()));
    w.u32(static_cast<std::uint32_t>(temporal.width));
    w.raw(serialize_tensor(matrix_tensor(tex.features)));
    w.raw(serialize_tensor(vector_tensor(tex.opacity_logit)));
    w.raw(serialize_tensor(matrix_tensor(tex.log_scale)));
    w.raw(serialize_tensor(matrix_tensor(tex.rotation)));
    w.raw(serialize_tensor(matrix_tensor(temporal.codes)));
    w.raw(serialize_tensor(matrix_tensor(temporal.mixer)));
    w.raw(serialize_tensor(vector_tensor(temporal.mixer_bias)));
    return w.take();
}

void parse_texture(const std::string& bytes, const BodyAsset& asset, GaussianTexture& tex, TemporalFeatures& temporal) {
    ByteReader r(bytes, "texture checkpoint");
    r.expect_magic("GPT1");
    const std::uint64_t hash = r.u64();
    if (hash != asset.topology_hash()) throw TopologyMismatch(asset.topology_hash(), hash);
    const int res = static_cast<int>(r.u32());
    const int channels = static_cast<int>(r.u32());
    const int n = static_cast<int>(r.u32());
    const int frames = static_cast<int>(r.u32());
    const int width = static_cast<int>(r.u32());
    if (res <= 0 || channels <= 0 || width <= 0) throw IoError("texture checkpoint: bad header");
    auto binding = std::make_shared<const UvBinding>(build_binding(asset, res));
    if (binding->active() != n) throw IoError("texture checkpoint: active texel count differs from the asset atlas");
    tex = GaussianTexture{};
    tex.binding = binding;
    tex.channels = channels;
    tex.features = tensor_matrix(parse_tensor(r), n, channels, "texture features");
    tex.opacity_logit = tensor_matrix(parse_tensor(r), n, 1, "texture opacity");
    tex.log_scale = tensor_matrix(parse_tensor(r), n, 3, "texture scale");
    tex.rotation = tensor_matrix(parse_tensor(r), n, 4, "texture rotation");
    temporal = TemporalFeatures{};
    temporal.width = width;
    temporal.codes = tensor_matrix(parse_tensor(r), frames, width, "temporal codes");
    temporal.mixer = tensor_matrix(parse_tensor(r), channels, width, "temporal mixer");
    temporal.mixer_bias = tensor_matrix(parse_tensor(r), channels, 1, "temporal mixer bias");
    if (r.remaining() != 0) throw IoError("texture checkpoint: trailing bytes");
}

std::string serialize_stack(const RerenderStack& s, std::uint64_t topology_hash) {
    s.validate();
    ByteWriter w;
    w.magic("GPR1");
    w.u64(topology_hash);
    w.u32(static_cast<std::uint32_t>(s.feature_channels()));
    w.raw(serialize_tensor(matrix_tensor(s.fg_project)));
    for (const ConvLayer* l : {&s.enc1, &s.enc2, &s.dec1, &s.dec2, &s.dec3}) {
        w.u32(static_cast<std::uint32_t>(l->in_channels));
        w.u32(static_cast<std::uint32_t>(l->out_channels));
        w.u32(l->relu ? 1u : 0u);
        w.raw(serialize_tensor(tensor_from(l->kernel.data(), {static_cast<std::uint32_t>(l->out_channels),
                                                             static_cast<std::uint32_t>(l->in_channels), 3u, 3u})));
        w.raw(serialize_tensor(tensor_from(l->bias.data(), {static_cast<std::uint32_t>(l->out_channels)})));
    }
    return w.take();
}

RerenderStack parse_stack(const std::string& bytes, std::uint64_t topology_hash) {
    ByteReader r(bytes, "rerender checkpoint");
    r.expect_magic("GPR1");
    const std::uint64_t hash = r.u64();
    if (hash != topology_hash) throw TopologyMismatch(topology_hash, hash);
    const int channels = static_cast<int>(r.u32());
    if (channels <= 0) throw IoError("rerender checkpoint: bad feature channel count");
    RerenderStack s;
    s.fg_project = tensor_matrix(parse_tensor(r), kFusedChannels, channels, "fg_project");
    for (ConvLayer* l : {&s.enc1, &s.enc2, &s.dec1, &s.dec2, &s.dec3}) {
        const int in = static_cast<int>(r.u32());
        const int out = static_cast<int>(r.u32());
        const bool relu = r.u32() != 0;
        if (in <= 0 || out <= 0 || in > 4096 || out > 4096) throw IoError("rerender checkpoint: bad layer dims");
        *l = ConvLayer(in, out, relu);
        const Tensor k = parse_tensor(r);
        if (k.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(out), static_cast<std::uint32_t>(in), 3u, 3u})
            throw IoError("rerender checkpoint: kernel shape mismatch");
        for (std::size_t i = 0; i < k.data.size(); ++i) l->kernel[i] = k.data[i];
        const Tensor b = parse_tensor(r);
        if (b.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(out)})
            throw IoError("rerender checkpoint: bias shape mismatch");
        for (std::size_t i = 0; i < b.data.size(); ++i) l->bias[i] = b.data[i];
    }
    if (r.remaining() != 0) throw IoError("rerender checkpoint: trailing bytes");
    try {
        s.validate();
    } catch (const InvalidArgument& e) {
        throw IoError(std::string("rerender checkpoint: ") + e.what());
    }
    return s;
}

void save_checkpoint(const std::filesystem::path& dir, const BodyAsset& asset, const PortraitModel& model) {
    write_file_atomic(dir / "texture.gpt", serialize_texture(model.texture, model.temporal));
    write_file_atomic(dir / "rerender.gpr", serialize_stack(model.stack, asset.topology_hash()));
    write_tensor(dir / "delta.ntf", matrix_tensor(model.delta));
}

PortraitModel load_checkpoint(const std::filesystem::path& dir, const BodyAsset& asset) {
    PortraitModel pm;
    parse_texture(read_file(dir / "texture.gpt"), asset, pm.texture, pm.temporal);
    pm.stack = parse_stack(read_file(dir / "rerender.gpr"), asset.topology_hash());
    if (pm.stack.feature_channels() != pm.texture.channels)
        throw IoError("checkpoint: texture and rerender channel counts differ");
    const RowMatrix d = tensor_matrix(read_tensor(dir / "delta.ntf"), asset.num_vertices(), 3, "displacement");
    pm.delta = d;
    return pm;
}

std::string format_loss_csv(const std::vector<LossRecord>& curve) {
    std::ostringstream os;
    os << "iteration,recon,mask,perceptual,background,total\n";
    for (const LossRecord& r : curve)
        os << r.iteration << ',' << fmt(r.loss.recon, 9) << ',' << fmt(r.loss.mask, 9) << ','
           << fmt(r.loss.perceptual, 9) << ',' << fmt(r.loss.background, 9) << ',' << fmt(r.loss.total, 9) << '\n';
    return os.str();
}

}  // namespace fsplat
