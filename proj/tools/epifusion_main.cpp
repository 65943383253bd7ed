// Command-line front end: dataset synthesis, epipolar-field dumps, training,
// evaluation, attention inspection and the ablation suites.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "epifusion/dataset_io.hpp"
#include "epifusion/evaluate.hpp"
#include "epifusion/train.hpp"

namespace fs = std::filesystem;
using namespace epifusion;

namespace {

struct GenArgs {
  int cams = 2;
  int frames = 100;
  double occlude = 0.25;
  int occlude_joints = 2;
  uint64_t seed = 0;
  std::string out;
  double radius = 3000.0;
  double height = 500.0;
  int image_size = 128;
  double focal = 1600.0;
  double noise = 0.05;
};

int cmd_gen(const GenArgs& a) {
  GenConfig cfg;
  cfg.n_cams = a.cams;
  cfg.n_frames = a.frames;
  cfg.radius_mm = a.radius;
  cfg.height_mm = a.height;
  cfg.image_size = a.image_size;
  cfg.focal_px = a.focal;
  cfg.seed = a.seed;
  cfg.render.occlusion.frame_fraction = a.occlude;
  cfg.render.occlusion.joints_per_frame = a.occlude_joints;
  cfg.render.sigma_feat = a.noise;
  Dataset ds = generate_dataset(cfg);
  write_dataset(a.out, ds);
  std::cout << "wrote " << ds.frames.size() << " frames, " << ds.rig.cameras.size()
            << " views to " << a.out << "\n";
  return 0;
}

struct FieldArgs {
  std::string rig_path;
  std::string query = "64,64";
  double gamma = 10.0;
  std::string out;
  int grid_h = 16, grid_w = 16;
  double stride = 8.0, offset = 3.5;
  int view_from = 0, view_to = 1;
  bool pgm = false;
};

Pixel parse_query(const std::string& s) {
  const size_t comma = s.find(',');
  if (comma == std::string::npos) throw CLI::ValidationError("--query expects 'u,v'");
  try {
    return Pixel{std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
  } catch (const std::exception&) {
    throw CLI::ValidationError("--query expects numeric 'u,v'");
  }
}

int cmd_field(const FieldArgs& a) {
  const Rig rig = read_rig_json(a.rig_path);
  if (a.view_from < 0 || a.view_to < 0 ||
      static_cast<size_t>(std::max(a.view_from, a.view_to)) >= rig.cameras.size())
    throw IndexOutOfRange("field: view index out of range");
  const GridSpec grid{a.grid_h, a.grid_w, a.stride, a.offset};
  const EpipolarFieldGrid field =
      epipolar_field(rig.cameras[static_cast<size_t>(a.view_from)],
                     rig.cameras[static_cast<size_t>(a.view_to)], parse_query(a.query), grid, a.gamma);
  write_epifield_file(a.out, field);
  if (a.pgm) write_pgm(a.out + ".pgm", field);
  if (field.degenerate_query) std::cout << "warning: degenerate query (epipole); uniform field\n";
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const TrainConfig cfg = read_train_config(config_path);
  const Dataset ds = read_dataset(data_dir);
  const TrainResult res = train(cfg, ds);
  fs::create_directories(out_dir);
  write_checkpoint((fs::path(out_dir) / "model.tfz").string(), res.params);
  write_epoch_csv((fs::path(out_dir) / "train_log.csv").string(), res.epochs);
  write_train_config((fs::path(out_dir) / "config.txt").string(), cfg);
  if (!res.epochs.empty())
    std::cout << "final loss " << res.epochs.back().loss << " after " << res.epochs.size()
              << " epochs\n";
  std::cout << "wrote " << (fs::path(out_dir) / "model.tfz").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& report_path) {
  const Parameters params = read_checkpoint(ckpt);
  const Dataset ds = read_dataset(data_dir);
  const EvalReport rep = evaluate(params, ds);
  write_report_json(report_path, rep);
  MetricsRow row;
  row.model = rep.model_name;
  row.arm = pe_mode_name(params.cfg.pe_mode);
  row.gamma = params.cfg.gamma;
  row.layers = params.cfg.layers;
  row.heads = params.cfg.heads;
  row.jdr = rep.jdr_mean;
  row.mpjpe = rep.mpjpe_mean;
  row.mpjpe_occluded = rep.mpjpe_occluded;
  row.mpjpe_visible = rep.mpjpe_visible;
  write_metrics_csv(report_path + ".csv", {row});
  std::cout << "JDR " << rep.jdr_mean << "%  MPJPE " << rep.mpjpe_mean << " mm  (occluded "
            << rep.mpjpe_occluded << " mm over " << rep.n_occluded_joints << " joints)\n";
  std::cout << "wrote " << report_path << "\n";
  return 0;
}

int cmd_attn(const std::string& ckpt, const std::string& data_dir, int frame, int view,
             const std::string& query, const std::string& out_prefix) {
  const Parameters params = read_checkpoint(ckpt);
  const Dataset ds = read_dataset(data_dir);
  const std::vector<std::string> files =
      dump_attention(params, ds, frame, view, parse_query(query), out_prefix);
  for (const std::string& f : files) std::cout << "wrote " << f << "\n";
  return 0;
}

struct AblateArgs {
  std::string suite;
  std::string data_dir;
  std::string out;
  std::string config_path;
};

int cmd_ablate(const AblateArgs& a) {
  TrainConfig base;
  if (!a.config_path.empty()) base = read_train_config(a.config_path);
  const Dataset ds = read_dataset(a.data_dir);

  struct Arm {
    std::string name;
    TrainConfig cfg;
  };
  std::vector<Arm> arms;
  if (a.suite == "gamma") {
    for (double g : {1.0, 10.0, 100.0, 1000.0}) {
      TrainConfig c = base;
      c.model.gamma = g;
      arms.push_back({"gamma_" + std::to_string(static_cast<int>(g)), c});
    }
  } else if (a.suite == "layers") {
    for (int n : {1, 2, 3, 4}) {
      TrainConfig c = base;
      c.model.layers = n;
      arms.push_back({"layers_" + std::to_string(n), c});
    }
  } else if (a.suite == "heads") {
    for (int h : {1, 2, 4, 8}) {
      TrainConfig c = base;
      c.model.heads = h;
      arms.push_back({"heads_" + std::to_string(h), c});
    }
  } else if (a.suite == "pe") {
    for (PeMode m : {PeMode::No3d, PeMode::Learnable3d, PeMode::GpeNoLpos, PeMode::Full}) {
      TrainConfig c = base;
      c.model.pe_mode = m;
      arms.push_back({std::string("pe_") + pe_mode_name(m), c});
    }
  } else {
    throw CLI::ValidationError("--suite must be one of gamma|layers|heads|pe");
  }

  std::vector<MetricsRow> rows;
  for (const Arm& arm : arms) {
    std::cout << "[ablate] training " << arm.name << "\n" << std::flush;
    const TrainResult res = train(arm.cfg, ds);
    const EvalReport rep = evaluate(res.params, ds, 0, arm.name);
    MetricsRow row;
    row.model = arm.name;
    row.arm = pe_mode_name(arm.cfg.model.pe_mode);
    row.gamma = arm.cfg.model.gamma;
    row.layers = arm.cfg.model.layers;
    row.heads = arm.cfg.model.heads;
    row.seed = arm.cfg.seed;
    row.jdr = rep.jdr_mean;
    row.mpjpe = rep.mpjpe_mean;
    row.mpjpe_occluded = rep.mpjpe_occluded;
    row.mpjpe_visible = rep.mpjpe_visible;
    rows.push_back(row);
    std::cout << "[ablate] " << arm.name << ": JDR " << rep.jdr_mean << "%  MPJPE "
              << rep.mpjpe_mean << " mm\n";
  }
  write_metrics_csv(a.out, rows);
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epipolar-field guided two-view fusion for multi-view pose estimation"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* sub_gen = app.add_subcommand("gen", "generate a synthetic multi-camera dataset");
  sub_gen->add_option("--cams", gen.cams, "number of cameras (>= 2)");
  sub_gen->add_option("--frames", gen.frames, "number of frames");
  sub_gen->add_option("--occlude", gen.occlude, "fraction of frames with occlusion");
  sub_gen->add_option("--occlude-joints", gen.occlude_joints, "joints hidden per occluded frame");
  sub_gen->add_option("--seed", gen.seed, "random seed");
  sub_gen->add_option("--out", gen.out, "output dataset directory")->required();
  sub_gen->add_option("--radius", gen.radius, "camera circle radius (mm)");
  sub_gen->add_option("--height", gen.height, "camera height (mm)");
  sub_gen->add_option("--image-size", gen.image_size, "image size (px, divisible by 8)");
  sub_gen->add_option("--focal", gen.focal, "focal length (px)");
  sub_gen->add_option("--noise", gen.noise, "additive image noise stddev");

  FieldArgs field;
  CLI::App* sub_field = app.add_subcommand("field", "emit an epipolar field grid");
  sub_field->add_option("--rig", field.rig_path, "rig.json path")->required();
  sub_field->add_option("--query", field.query, "query pixel 'u,v' in the source view")->required();
  sub_field->add_option("--gamma", field.gamma, "soft factor");
  sub_field->add_option("--out", field.out, "output .epf path")->required();
  sub_field->add_option("--grid-h", field.grid_h, "grid rows");
  sub_field->add_option("--grid-w", field.grid_w, "grid cols");
  sub_field->add_option("--stride", field.stride, "grid stride (px)");
  sub_field->add_option("--offset", field.offset, "grid offset (px)");
  sub_field->add_option("--view-from", field.view_from, "query view index");
  sub_field->add_option("--view-to", field.view_to, "reference view index");
  sub_field->add_flag("--pgm", field.pgm, "also write an 8-bit PGM");

  std::string tr_config, tr_data, tr_out;
  CLI::App* sub_train = app.add_subcommand("train", "train a fusion model");
  sub_train->add_option("--config", tr_config, "key = value config file")->required();
  sub_train->add_option("--data", tr_data, "dataset directory")->required();
  sub_train->add_option("--out", tr_out, "output directory")->required();

  std::string ev_ckpt, ev_data, ev_report;
  CLI::App* sub_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  sub_eval->add_option("--ckpt", ev_ckpt, "model checkpoint (.tfz)")->required();
  sub_eval->add_option("--data", ev_data, "dataset directory")->required();
  sub_eval->add_option("--report", ev_report, "output report json")->required();

  std::string at_ckpt, at_data, at_query, at_out = "attn";
  int at_frame = 0, at_view = 0;
  CLI::App* sub_attn = app.add_subcommand("attn", "dump cross-view attention for a query pixel");
  sub_attn->add_option("--ckpt", at_ckpt, "model checkpoint (.tfz)")->required();
  sub_attn->add_option("--data", at_data, "dataset directory")->required();
  sub_attn->add_option("--frame", at_frame, "frame index")->required();
  sub_attn->add_option("--view", at_view, "query view (0 or 1)")->required();
  sub_attn->add_option("--query", at_query, "query pixel 'u,v'")->required();
  sub_attn->add_option("--out", at_out, "output file prefix");

  AblateArgs ab;
  CLI::App* sub_ablate = app.add_subcommand("ablate", "run an ablation suite");
  sub_ablate->add_option("--suite", ab.suite, "gamma|layers|heads|pe")->required();
  sub_ablate->add_option("--data", ab.data_dir, "dataset directory")->required();
  sub_ablate->add_option("--out", ab.out, "output csv")->required();
  sub_ablate->add_option("--config", ab.config_path, "base key = value config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the message/help
    return e.get_exit_code() == 0 ? 0 : 2;
  }

  try {
    if (sub_gen->parsed()) return cmd_gen(gen);
    if (sub_field->parsed()) return cmd_field(field);
    if (sub_train->parsed()) return cmd_train(tr_config, tr_data, tr_out);
    if (sub_eval->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_report);
    if (sub_attn->parsed()) return cmd_attn(at_ckpt, at_data, at_frame, at_view, at_query, at_out);
    if (sub_ablate->parsed()) return cmd_ablate(ab);
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
