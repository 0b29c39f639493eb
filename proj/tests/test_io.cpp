#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "featsplat/asset.hpp"
#include "featsplat/error.hpp"
#include "featsplat/gradcheck.hpp"
#include "featsplat/io.hpp"
#include "featsplat/pipeline.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace fsplat;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fsplat_io_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Config small_synth_config() {
    return Config::parse("frames = 4\nimage_size = 32\nscene_resolution = 32\nresolution = 16\nscene_seed = 3\n");
}

const fs::path& shared_dataset() {
    static const fs::path dir = [] {
        const fs::path d = scratch_dir("dataset");
        std::ostringstream log;
        cmd_synth(small_synth_config(), d, log);
        return d;
    }();
    return dir;
}

#ifdef FSPLAT_CLI_PATH
int run_cli(const std::string& args, std::string* output = nullptr) {
    const std::string log = (fs::temp_directory_path() / ("fsplat_cli_" + std::to_string(::getpid()) + ".log")).string();
    const int status = std::system((std::string(FSPLAT_CLI_PATH) + " " + args + " > " + log + " 2>&1").c_str());
    if (output) *output = slurp(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}
#endif

}  // namespace

TEST(TensorFile, RandomPayloadsRoundTripBitExactly) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor t;
        const int rank = static_cast<int>(rng() % 4);
        for (int r = 0; r < rank; ++r) t.dims.push_back(static_cast<std::uint32_t>(1 + rng() % 6));
        t.data.resize(t.count());
        for (float& v : t.data) v = std::bit_cast<float>(static_cast<std::uint32_t>(rng()) & 0x7f7fffffu);
        const std::string bytes = serialize_tensor(t);
        EXPECT_EQ(bytes.substr(0, 4), "NTF1");
        EXPECT_EQ(bytes.size(), 8 + 4 * t.dims.size() + 4 * t.data.size());
        const Tensor back = parse_tensor(bytes);
        EXPECT_EQ(back.dims, t.dims);
        EXPECT_EQ(std::memcmp(back.data.data(), t.data.data(), 4 * t.data.size()), 0);
        EXPECT_EQ(serialize_tensor(back), bytes);
    }
}

TEST(TensorFile, TruncatedOrBadMagicThrows) {
    Tensor t{{2, 3}, std::vector<float>(6, 1.5f)};
    const std::string bytes = serialize_tensor(t);
    EXPECT_THROW(parse_tensor(bytes.substr(0, bytes.size() - 1)), IoError);
    EXPECT_THROW(parse_tensor("NTF2" + bytes.substr(4)), IoError);
}

TEST(TensorFile, DiskRoundTrip) {
    const fs::path d = scratch_dir("tensor");
    std::mt19937_64 rng(2);
    const Image img = oracle::random_image(rng, 5, 4, 3);
    write_tensor(d / "x.ntf", tensor_from(img));
    const Image back = image_from(read_tensor(d / "x.ntf"));
    ASSERT_EQ(back.height, 5);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        EXPECT_EQ(back.data[i], static_cast<double>(static_cast<float>(img.data[i])));
    fs::remove_all(d);
}

TEST(ImageFile, QuantizedImagesRoundTripExactly) {
    std::mt19937_64 rng(3);
    for (int channels : {1, 3}) {
        Image img(7, 9, channels);
        for (double& v : img.data) v = static_cast<double>(rng() % 256) / 255.0;
        const std::string bytes = encode_pnm(img);
        EXPECT_EQ(bytes.substr(0, 2), channels == 3 ? "P6" : "P5");
        const Image back = decode_pnm(bytes);
        EXPECT_EQ(back.data, img.data);
        EXPECT_EQ(encode_pnm(back), bytes);
    }
}

TEST(ImageFile, ClampsAndRoundsToNearest) {
    Image img(1, 4, 1);
    img.data = {-0.5, 1.7, 0.5 / 255.0 + 1e-9, 100.4 / 255.0};
    const std::string bytes = encode_pnm(img);
    const std::string payload = bytes.substr(bytes.size() - 4);
    EXPECT_EQ(static_cast<unsigned char>(payload[0]), 0);
    EXPECT_EQ(static_cast<unsigned char>(payload[1]), 255);
    EXPECT_EQ(static_cast<unsigned char>(payload[2]), 1);
    EXPECT_EQ(static_cast<unsigned char>(payload[3]), 100);
    EXPECT_THROW(encode_pnm(Image(2, 2, 2)), InvalidArgument);
    EXPECT_THROW(decode_pnm(bytes.substr(0, bytes.size() - 1)), IoError);
}

TEST(TrackFile, NineDigitValuesRoundTripExactly) {
    const BodyAsset a = make_portrait_asset({14, 12});
    std::mt19937_64 rng(4);
    Track tr;
    PoseParams base = PoseParams::zeros(a);
    auto nine = [&]() {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", std::normal_distribution<double>(0.0, 0.4)(rng));
        return std::strtod(buf, nullptr);
    };
    for (Eigen::Index i = 0; i < base.beta.size(); ++i) base.beta(i) = nine();
    for (int t = 0; t < 5; ++t) {
        PoseParams p = base;
        for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta(i) = nine();
        for (Eigen::Index i = 0; i < p.psi.size(); ++i) p.psi(i) = nine();
        p.translation = Eigen::Vector3d(nine(), nine(), nine());
        tr.frames.push_back(p);
    }
    const std::string csv = format_track_csv(a, tr);
    EXPECT_EQ(csv.substr(0, csv.find('\n')).substr(0, 13), "frame,beta_0,");
    const Track back = parse_track_csv(a, csv);
    const ParamLayout lay(a);
    for (int t = 0; t < 5; ++t)
        EXPECT_EQ(lay.flatten(back.frames[static_cast<std::size_t>(t)]), lay.flatten(tr.frames[static_cast<std::size_t>(t)]));
    EXPECT_EQ(format_track_csv(a, back), csv);
}

TEST(TrackFile, WrongColumnCountThrows) {
    const BodyAsset a = make_portrait_asset({14, 12});
    Track tr;
    tr.frames.push_back(PoseParams::zeros(a));
    std::string csv = format_track_csv(a, tr);
    csv.insert(csv.size() - 1, ",0");
    EXPECT_THROW(parse_track_csv(a, csv), IoError);
}

TEST(CameraFile, RoundTripsExactly) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Camera> cams;
    for (int i = 0; i < 3; ++i) {
        Camera c;
        c.width = 30 + i;
        c.height = 20 + i;
        c.fx = 50 + n(rng);
        c.fy = 51 + n(rng);
        c.cx = 15 + n(rng);
        c.cy = 10 + n(rng);
        c.near = 0.02;
        c.world_to_camera.linear() = Eigen::Quaterniond::UnitRandom().toRotationMatrix();
        c.world_to_camera.translation() = Eigen::Vector3d(n(rng), n(rng), n(rng));
        cams.push_back(c);
    }
    const std::vector<Camera> back = parse_cameras_csv(format_cameras_csv(cams));
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].world_to_camera.matrix(), cams[i].world_to_camera.matrix());
        EXPECT_EQ(back[i].fx, cams[i].fx);
        EXPECT_EQ(back[i].cy, cams[i].cy);
        EXPECT_EQ(back[i].width, cams[i].width);
        EXPECT_EQ(back[i].near, cams[i].near);
    }
}

TEST(LandmarkFile, RoundTripsExactly) {
    std::vector<int> verts = {3, 17, 40, 2};
    Eigen::MatrixXd obs = Eigen::MatrixXd::Random(4, 2) * 50.0;
    std::vector<int> v2;
    Eigen::MatrixXd o2;
    parse_landmarks_csv(format_landmarks_csv(verts, obs), v2, o2);
    EXPECT_EQ(v2, verts);
    EXPECT_EQ(o2, obs);
}

TEST(ConfigFile, ParsesTypedValuesAndRejectsUnknownKeys) {
    const Config c = Config::parse("# comment\niterations = 12\nlr.features = 0.5  \ntcf = off\nname = a b\n");
    EXPECT_EQ(c.get_int("iterations", 0), 12);
    EXPECT_EQ(c.get_double("lr.features", 0), 0.5);
    EXPECT_FALSE(c.get_bool("tcf", true));
    EXPECT_EQ(c.get_string("name", ""), "a b");
    EXPECT_EQ(c.get_int("missing", 7), 7);
    EXPECT_THROW(c.get_int("lr.features", 0), ConfigError);
    EXPECT_THROW(c.require_known({"iterations", "lr.features", "tcf"}), ConfigError);
    EXPECT_THROW(Config::parse("no equals sign\n"), ConfigError);
    EXPECT_THROW(Config::parse("tcf = maybe\n").get_bool("tcf", true), ConfigError);
    EXPECT_THROW(train_config(Config::parse("iterations = -3\n")), ConfigError);
}

TEST(Checkpoint, TextureAndStackRoundTripBitExactly) {
    const BodyAsset a = make_portrait_asset({14, 12});
    PortraitModel pm = PortraitModel::create(a, 16, 3, true, 9);
    pm.temporal.codes.setRandom();
    pm.delta.setRandom();
    // Stored as 32-bit floats, so exactness is checked against float-representable values.
    auto to_float = [](double* p, Eigen::Index n) {
        for (Eigen::Index i = 0; i < n; ++i) p[i] = static_cast<double>(static_cast<float>(p[i]));
    };
    to_float(pm.texture.features.data(), pm.texture.features.size());
    to_float(pm.texture.opacity_logit.data(), pm.texture.opacity_logit.size());
    to_float(pm.texture.log_scale.data(), pm.texture.log_scale.size());
    to_float(pm.temporal.codes.data(), pm.temporal.codes.size());
    to_float(pm.temporal.mixer.data(), pm.temporal.mixer.size());
    to_float(pm.delta.data(), pm.delta.size());
    pm.stack.for_each_param([&](const char*, double* p, std::size_t n) { to_float(p, static_cast<Eigen::Index>(n)); });

    const std::string tex_bytes = serialize_texture(pm.texture, pm.temporal);
    EXPECT_EQ(tex_bytes.substr(0, 4), "GPT1");
    GaussianTexture tex;
    TemporalFeatures tf;
    parse_texture(tex_bytes, a, tex, tf);
    EXPECT_EQ(tex.features, pm.texture.features);
    EXPECT_EQ(tex.opacity_logit, pm.texture.opacity_logit);
    EXPECT_EQ(tex.log_scale, pm.texture.log_scale);
    EXPECT_EQ(tf.codes, pm.temporal.codes);
    EXPECT_EQ(tf.mixer, pm.temporal.mixer);
    EXPECT_EQ(serialize_texture(tex, tf), tex_bytes);

    const std::string stack_bytes = serialize_stack(pm.stack, a.topology_hash());
    EXPECT_EQ(stack_bytes.substr(0, 4), "GPR1");
    const RerenderStack s = parse_stack(stack_bytes, a.topology_hash());
    EXPECT_EQ(s.fg_project, pm.stack.fg_project);
    EXPECT_EQ(s.dec3.kernel, pm.stack.dec3.kernel);
    EXPECT_EQ(s.enc1.bias, pm.stack.enc1.bias);
    EXPECT_EQ(serialize_stack(s, a.topology_hash()), stack_bytes);

    const fs::path d = scratch_dir("ckpt");
    save_checkpoint(d, a, pm);
    const PortraitModel back = load_checkpoint(d, a);
    EXPECT_EQ(back.delta, pm.delta);
    EXPECT_EQ(back.texture.features, pm.texture.features);
    fs::remove_all(d);
}

TEST(Checkpoint, TopologyMismatchIsReported) {
    const BodyAsset a = make_portrait_asset({14, 12});
    const BodyAsset b = fixture::quad_asset();
    const PortraitModel pm = PortraitModel::create(a, 8, 0, false, 1);
    GaussianTexture tex;
    TemporalFeatures tf;
    EXPECT_THROW(parse_texture(serialize_texture(pm.texture, pm.temporal), b, tex, tf), TopologyMismatch);
    EXPECT_THROW(parse_stack(serialize_stack(pm.stack, a.topology_hash()), b.topology_hash()), TopologyMismatch);
}

TEST(LossCsv, HasHeaderAndOneRowPerRecord) {
    std::vector<LossRecord> curve = {{0, 1, {0.5, 0.25, 0.125, 0.0625, 0.9375}}, {1, 0, {1, 2, 3, 4, 10}}};
    const std::string csv = format_loss_csv(curve);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "iteration,recon,mask,perceptual,background,total");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Commands, SynthManifestListsEveryFrame) {
    const fs::path& d = shared_dataset();
    const std::string manifest = slurp(d / "manifest.csv");
    EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 5);
    const DiskDataset ds = read_dataset(d);
    EXPECT_EQ(ds.data.size(), 4);
    EXPECT_EQ(ds.clean.size(), 4u);
    EXPECT_EQ(ds.data.frames[0].image.width, 32);
}

TEST(Commands, SynthIsReproducible) {
    const fs::path d = scratch_dir("synth_again");
    std::ostringstream log;
    cmd_synth(small_synth_config(), d, log);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(shared_dataset())) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), shared_dataset());
        EXPECT_EQ(slurp(e.path()), slurp(d / rel)) << rel;
        ++files;
    }
    EXPECT_GT(files, 20u);
    fs::remove_all(d);
}

TEST(Commands, FitWithZeroIterationsWritesTheInitialization) {
    const fs::path out = scratch_dir("fit0");
    Config cfg = small_synth_config();
    cfg.set("iterations", "0");
    cfg.set("seed", "4");
    std::ostringstream log;
    cmd_fit(shared_dataset(), std::nullopt, cfg, out, log);
    const DiskDataset ds = read_dataset(shared_dataset());
    const fs::path ref = scratch_dir("fit0_ref");
    save_checkpoint(ref, ds.asset, PortraitModel::create(ds.asset, 16, ds.data.size(), true, 4));
    for (const char* f : {"texture.gpt", "rerender.gpr", "delta.ntf"}) EXPECT_EQ(slurp(out / f), slurp(ref / f)) << f;
    fs::remove_all(out);
    fs::remove_all(ref);
}

TEST(Commands, RenderOfEmptyOpacityCheckpointIsBackgroundOnly) {
    const DiskDataset ds = read_dataset(shared_dataset());
    PortraitModel pm = PortraitModel::create(ds.asset, 16, ds.data.size(), true, 2);
    pm.texture.opacity_logit.setConstant(-30.0);
    const fs::path ckpt = scratch_dir("empty_ckpt");
    const fs::path out = scratch_dir("empty_render");
    save_checkpoint(ckpt, ds.asset, pm);
    const PortraitModel loaded = load_checkpoint(ckpt, ds.asset);
    std::ostringstream log;
    cmd_render(ckpt, shared_dataset(), std::nullopt, out, log);
    for (int t = 0; t < ds.data.size(); ++t) {
        const Image expected =
            clamp_unit(decode(loaded.stack, encode_background(loaded.stack, ds.data.frames[static_cast<std::size_t>(t)].background)));
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.ppm", t);
        EXPECT_EQ(slurp(out / name), encode_pnm(expected)) << name;
    }
    fs::remove_all(ckpt);
    fs::remove_all(out);
}

TEST(Commands, SwapIsDeterministic) {
    Config cfg = small_synth_config();
    cfg.set("iterations", "6");
    cfg.set("deterministic", "on");
    const fs::path a = scratch_dir("swap_a"), b = scratch_dir("swap_b");
    std::ostringstream log;
    const SwapReport ra = cmd_swap(shared_dataset(), cfg, a, log);
    const SwapReport rb = cmd_swap(shared_dataset(), cfg, b, log);
    EXPECT_EQ(ra.heldout_frames, 1);
    EXPECT_EQ(ra.heldout_psnr, rb.heldout_psnr);
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) {
            EXPECT_EQ(slurp(e.path()), slurp(b / fs::relative(e.path(), a))) << e.path();
        }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Gradcheck, CorruptedAdjointFailsNamingTheClass) {
    GradcheckOptions o;
    o.scope = "renderer";
    o.corrupt = "gaussian.opacity";
    const GradcheckReport r = run_gradcheck(o);
    EXPECT_FALSE(r.passed());
    for (const auto& e : r.entries) EXPECT_EQ(e.passed(), e.name != "gaussian.opacity") << e.name;
    EXPECT_NE(r.format().find("gaussian.opacity"), std::string::npos);
}

TEST(Gradcheck, RerunReportsIdenticalNumbers) {
    GradcheckOptions o;
    o.scope = "rerender";
    const GradcheckReport a = run_gradcheck(o), b = run_gradcheck(o);
    EXPECT_TRUE(a.passed());
    ASSERT_EQ(a.entries.size(), b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        EXPECT_EQ(a.entries[i].name, b.entries[i].name);
        EXPECT_EQ(a.entries[i].worst_rel_error, b.entries[i].worst_rel_error);
    }
    o.scope = "nonsense";
    EXPECT_THROW(run_gradcheck(o), InvalidArgument);
}

#ifdef FSPLAT_CLI_PATH
TEST(Cli, ExitCodes) {
    const fs::path d = scratch_dir("cli");
    {
        std::ofstream(d / "bad.cfg") << "frames = 2\nnot_a_key = 1\n";
    }
    std::string out;
    EXPECT_EQ(run_cli("synth --config " + (d / "bad.cfg").string() + " --out " + (d / "x").string(), &out), 2) << out;
    EXPECT_NE(out.find("not_a_key"), std::string::npos);
    EXPECT_EQ(run_cli("fit " + (d / "missing").string() + " --out " + (d / "y").string()), 1);
    EXPECT_EQ(run_cli("synth"), 2);
    EXPECT_EQ(run_cli("render " + (d / "y").string() + " --dataset " + shared_dataset().string() + " --out " +
                      (d / "z").string() + " --tcf maybe"),
              2);

    const PortraitModel foreign = PortraitModel::create(fixture::quad_asset(), 4, 0, false, 1);
    save_checkpoint(d / "foreign", fixture::quad_asset(), foreign);
    EXPECT_EQ(run_cli("render " + (d / "foreign").string() + " --dataset " + shared_dataset().string() + " --out " +
                          (d / "z").string(),
                      &out),
              3)
        << out;
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fixture::quad_asset().topology_hash()));
    EXPECT_NE(out.find(hash), std::string::npos) << out;

    EXPECT_EQ(run_cli("gradcheck --scope loss", &out), 0) << out;
    EXPECT_EQ(run_cli("gradcheck --scope loss --corrupt loss.mask", &out), 1);
    EXPECT_NE(out.find("loss.mask"), std::string::npos);
    fs::remove_all(d);
}
#endif
