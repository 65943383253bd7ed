#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "epifusion/evaluate.hpp"
#include "epifusion/train.hpp"

using namespace epifusion;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("train_eval");

namespace {

// Small dataset + config used across the training tests: 64 px images so
// the sequence length stays short.
Dataset small_dataset(int frames, uint64_t seed, double occlude = 0.25) {
  GenConfig cfg;
  cfg.n_frames = frames;
  cfg.seed = seed;
  cfg.image_size = 64;
  cfg.focal_px = 800.0;
  cfg.render.occlusion.frame_fraction = occlude;
  cfg.render.sigma_feat = 0.0;
  return generate_dataset(cfg);
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.model.d = 16;
  cfg.model.heads = 2;
  cfg.model.layers = 1;
  cfg.model.d_ff = 32;
  cfg.model.d_head = 16;
  cfg.model.image_size = 64;
  cfg.model.grid_h = cfg.model.grid_w = 8;
  cfg.epochs = 2;
  cfg.batch = 8;
  cfg.milestones = {};
  cfg.seed = 1;
  return cfg;
}

}  // namespace

TEST_CASE("train config text round trip and error paths") {
  TrainConfig cfg = small_config();
  cfg.milestones = {3, 5};
  cfg.model.pe_mode = PeMode::GpeNoLpos;
  cfg.model.mask_cross_view = true;
  const TrainConfig back = parse_train_config_text(train_config_to_text(cfg));
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.lr == cfg.lr);
  CHECK(back.milestones == cfg.milestones);
  CHECK(back.model.d == cfg.model.d);
  CHECK(back.model.pe_mode == PeMode::GpeNoLpos);
  CHECK(back.model.mask_cross_view);

  CHECK_THROWS_AS(parse_train_config_text("epochs 3\n"), FormatError);
  CHECK_THROWS_AS(parse_train_config_text("unknown_key = 3\n"), FormatError);
  CHECK_THROWS_AS(parse_train_config_text("epochs = banana\n"), FormatError);
  CHECK_THROWS_AS(parse_train_config_text("milestones = 5,3\n"), NumericError);
  CHECK_THROWS_AS(parse_train_config_text("lr = -1\n"), NumericError);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const Dataset ds = small_dataset(16, 6);
  TrainConfig cfg = small_config();
  cfg.epochs = 1;
  cfg.lr = 0.0;
  Parameters before;
  before.cfg = cfg.model;
  before.init(cfg.seed);
  const TrainResult res = train(cfg, ds);
  auto ra = before.registry();
  auto rb = res.params.registry();
  for (size_t t = 0; t < ra.size(); ++t)
    for (size_t e = 0; e < ra[t].second->data.size(); ++e)
      CHECK(ra[t].second->data[e] == rb[t].second->data[e]);
}

TEST_CASE("short training run reduces the loss and is seed-deterministic") {
  const Dataset ds = small_dataset(32, 7);
  TrainConfig cfg = small_config();
  cfg.epochs = 3;
  const TrainResult a = train(cfg, ds);
  CHECK(a.epochs.size() == 3);
  CHECK(a.epochs.back().loss < a.epochs.front().loss);

  const TrainResult b = train(cfg, ds);
  auto ra = const_cast<Parameters&>(a.params).registry();
  auto rb = const_cast<Parameters&>(b.params).registry();
  for (size_t t = 0; t < ra.size(); ++t)
    for (size_t e = 0; e < ra[t].second->data.size(); ++e)
      CHECK(ra[t].second->data[e] == rb[t].second->data[e]);

  // thread count must not change the result
  TrainConfig cfg1 = cfg;
  cfg1.threads = 1;
  const TrainResult c = train(cfg1, ds);
  auto rc = const_cast<Parameters&>(c.params).registry();
  for (size_t t = 0; t < ra.size(); ++t)
    for (size_t e = 0; e < ra[t].second->data.size(); ++e)
      CHECK(ra[t].second->data[e] == rc[t].second->data[e]);

  const std::string csv = epoch_csv(a.epochs);
  CHECK(csv.find("schema,epoch,loss") == 0);
  CHECK(csv.find("v1,1,") != std::string::npos);
}

TEST_CASE("checkpoint round trip preserves every tensor at f32 precision") {
  Parameters params;
  params.cfg = small_config().model;
  params.init(11);
  const fs::path path = fs::temp_directory_path() / "epifusion_ckpt_test.tfz";
  write_checkpoint(path.string(), params);
  const Parameters back = read_checkpoint(path.string());
  CHECK(back.cfg.d == params.cfg.d);
  CHECK(back.cfg.pe_mode == params.cfg.pe_mode);
  auto ra = params.registry();
  auto rb = const_cast<Parameters&>(back).registry();
  REQUIRE(ra.size() == rb.size());
  for (size_t t = 0; t < ra.size(); ++t) {
    CHECK(ra[t].first == rb[t].first);
    for (size_t e = 0; e < ra[t].second->data.size(); ++e)
      CHECK(rb[t].second->data[e] ==
            static_cast<double>(static_cast<float>(ra[t].second->data[e])));
  }

  // truncated file
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS_AS(read_checkpoint(path.string()), FormatError);
  fs::remove(path);
}

TEST_CASE("oracle evaluation bounds the decode + triangulation pipeline") {
  const Dataset ds = small_dataset(60, 13, 0.25);
  const EvalReport rep = evaluate_oracle(ds);
  // 64 px images, 16x16 heatmaps: one heatmap cell is 4 px =~ 15 mm at this
  // rig, quarter-cell decode gives a few mm (measured 2.6 mm)
  CHECK(rep.mpjpe_mean < 5.0);
  CHECK(rep.jdr_mean > 95.0);
  CHECK(rep.n_occluded_joints > 0);
}

TEST_CASE("constant heatmaps give near-zero JDR and large MPJPE") {
  const Dataset ds = small_dataset(40, 15, 0.0);
  Parameters params;
  params.cfg = small_config().model;
  params.init(17);
  // zero every weight: the head emits a constant heatmap per joint
  for (auto& [name, t] : params.registry())
    std::fill(t->data.begin(), t->data.end(), 0.0);
  const EvalReport rep = evaluate(params, ds);
  CHECK(rep.jdr_mean < 5.0);
  CHECK(rep.mpjpe_mean > 100.0);
}

TEST_CASE("evaluation report json round trip") {
  const Dataset ds = small_dataset(10, 19);
  const EvalReport rep = evaluate_oracle(ds);
  const fs::path path = fs::temp_directory_path() / "epifusion_report_test.json";
  write_report_json(path.string(), rep);
  const EvalReport back = read_report_json(path.string());
  CHECK(back.jdr_mean == doctest::Approx(rep.jdr_mean));
  CHECK(back.mpjpe_mean == doctest::Approx(rep.mpjpe_mean));
  CHECK(back.mpjpe_joint.size() == rep.mpjpe_joint.size());
  CHECK(back.n_frames == rep.n_frames);
  fs::remove(path);

  const std::string csv = metrics_csv({MetricsRow{"m", "full", 10.0, 3, 4, 0, 99.0, 1.5, 2.0, 1.2}});
  CHECK(csv.find("schema,model,arm") == 0);
  CHECK(csv.find("v1,m,full,10,3,4,0,99,1.5,2,1.2") != std::string::npos);
}

TEST_CASE("dump_attention writes row-stochastic grids and the exact field") {
  const Dataset ds = small_dataset(6, 21);
  TrainConfig cfg = small_config();
  Parameters params;
  params.cfg = cfg.model;
  params.init(23);

  const fs::path dir = fs::temp_directory_path() / "epifusion_attn_test";
  fs::create_directories(dir);
  const std::string prefix = (dir / "attn").string();
  const std::vector<std::string> files = dump_attention(params, ds, 2, 0, Pixel{30.0, 28.0}, prefix);
  REQUIRE(files.size() == static_cast<size_t>(cfg.model.layers * cfg.model.heads + 1));

  for (size_t i = 0; i + 1 < files.size(); ++i) {
    const EpipolarFieldGrid g = read_epifield_file(files[i]);
    CHECK(g.grid.height == cfg.model.grid_h);
    double sum = 0.0;
    for (double s : g.scores) sum += s;
    // one attention row restricted to the other view: sums to the cross-view
    // attention mass, at most 1 + f32 noise
    CHECK(sum <= 1.0 + 1e-5);
    CHECK(sum > 0.0);
  }

  // the emitted field goes through epipolar_field itself: byte-identical
  const EpipolarFieldGrid direct = epipolar_field(
      ds.rig.cameras[0], ds.rig.cameras[1], Pixel{30.0, 28.0}, cfg.model.grid(), cfg.model.gamma);
  const std::string direct_path = (dir / "direct.epf").string();
  write_epifield_file(direct_path, direct);
  std::ifstream fa(files.back(), std::ios::binary), fb(direct_path, std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);

  CHECK_THROWS_AS(dump_attention(params, ds, 99, 0, Pixel{30, 28}, prefix), IndexOutOfRange);
  CHECK_THROWS_AS(dump_attention(params, ds, 0, 0, Pixel{-500, 28}, prefix), IndexOutOfRange);
  fs::remove_all(dir);
}

TEST_SUITE_END();
