#include "epifusion/train.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace epifusion {

void TrainConfig::check() const {
  model.check();
  if (lr < 0.0) throw NumericError("train config: lr must be nonnegative");
  if (batch < 1) throw NumericError("train config: batch must be >= 1");
  if (epochs < 0) throw NumericError("train config: epochs must be >= 0");
  for (size_t i = 1; i < milestones.size(); ++i)
    if (milestones[i] <= milestones[i - 1])
      throw NumericError("train config: milestones must be strictly increasing");
}

TrainConfig parse_train_config_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "epochs") cfg.epochs = std::stoi(val);
      else if (key == "lr") cfg.lr = std::stod(val);
      else if (key == "lr_ratio") cfg.lr_ratio = std::stod(val);
      else if (key == "batch") cfg.batch = std::stoi(val);
      else if (key == "seed") cfg.seed = std::stoull(val);
      else if (key == "threads") cfg.threads = std::stoi(val);
      else if (key == "gamma") cfg.model.gamma = std::stod(val);
      else if (key == "d") cfg.model.d = std::stoi(val);
      else if (key == "heads") cfg.model.heads = std::stoi(val);
      else if (key == "layers") cfg.model.layers = std::stoi(val);
      else if (key == "d_ff") cfg.model.d_ff = std::stoi(val);
      else if (key == "d_head") cfg.model.d_head = std::stoi(val);
      else if (key == "image_size") {
        cfg.model.image_size = std::stoi(val);
        cfg.model.grid_h = cfg.model.grid_w = cfg.model.image_size / 8;
      } else if (key == "pe_mode") cfg.model.pe_mode = pe_mode_from_name(val);
      else if (key == "single_view") cfg.model.mask_cross_view = std::stoi(val) != 0;
      else if (key == "milestones") {
        cfg.milestones.clear();
        std::istringstream ms(val);
        std::string tok;
        while (std::getline(ms, tok, ','))
          if (!tok.empty()) cfg.milestones.push_back(std::stoi(tok));
      } else throw FormatError("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw FormatError("config: bad value for '" + key + "'");
    } catch (const std::out_of_range&) {
      throw FormatError("config: value out of range for '" + key + "'");
    }
  }
  cfg.check();
  return cfg;
}

TrainConfig read_train_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_train_config_text(ss.str());
}

std::string train_config_to_text(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "epochs = " << cfg.epochs << "\n";
  os << "lr = " << cfg.lr << "\n";
  os << "milestones = ";
  for (size_t i = 0; i < cfg.milestones.size(); ++i)
    os << (i ? "," : "") << cfg.milestones[i];
  os << "\n";
  os << "lr_ratio = " << cfg.lr_ratio << "\n";
  os << "batch = " << cfg.batch << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "threads = " << cfg.threads << "\n";
  os << "gamma = " << cfg.model.gamma << "\n";
  os << "d = " << cfg.model.d << "\n";
  os << "heads = " << cfg.model.heads << "\n";
  os << "layers = " << cfg.model.layers << "\n";
  os << "d_ff = " << cfg.model.d_ff << "\n";
  os << "d_head = " << cfg.model.d_head << "\n";
  os << "image_size = " << cfg.model.image_size << "\n";
  os << "pe_mode = " << pe_mode_name(cfg.model.pe_mode) << "\n";
  os << "single_view = " << (cfg.model.mask_cross_view ? 1 : 0) << "\n";
  return os.str();
}

void write_train_config(const std::string& path, const TrainConfig& cfg) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << train_config_to_text(cfg);
}

namespace {

struct Adam {
  std::vector<Tensor> m, v;
  long step = 0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  explicit Adam(const std::vector<std::pair<std::string, Tensor*>>& reg) {
    for (const auto& [name, t] : reg) {
      m.push_back(Tensor::zeros(t->shape));
      v.push_back(Tensor::zeros(t->shape));
    }
  }

  void apply(std::vector<std::pair<std::string, Tensor*>>& reg, const std::vector<Tensor>& grads,
             double lr) {
    ++step;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (size_t i = 0; i < reg.size(); ++i) {
      Tensor& p = *reg[i].second;
      const Tensor& g = grads[i];
      for (size_t e = 0; e < p.data.size(); ++e) {
        m[i].data[e] = b1 * m[i].data[e] + (1.0 - b1) * g.data[e];
        v[i].data[e] = b2 * v[i].data[e] + (1.0 - b2) * g.data[e] * g.data[e];
        p.data[e] -= lr * (m[i].data[e] / bc1) / (std::sqrt(v[i].data[e] / bc2) + eps);
      }
    }
  }
};

struct SampleCache {
  std::vector<std::array<Tensor, 2>> pooled;  // [frame][view] L x C
  const Dataset* ds = nullptr;
  double sigma_hm = 2.0;
  const ModelConfig* cfg = nullptr;

  Tensor gt_tensor(size_t frame, int view) const {
    const Heatmap hm = render_gt_heatmap(ds->frames[frame].views[static_cast<size_t>(view)].joints2d,
                                         cfg->image_size, sigma_hm);
    return heatmap_to_tensor(hm);
  }
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& dataset) {
  cfg.check();
  if (dataset.frames.empty()) throw DataError("train: dataset is empty");
  if (dataset.rig.cameras.size() < 2) throw DataError("train: dataset needs two views");

  const ModelConfig& mc = cfg.model;
  GeometryContext geo = make_geometry_context(dataset.rig, mc);

  SampleCache cache;
  cache.ds = &dataset;
  cache.sigma_hm = dataset.sigma_hm;
  cache.cfg = &mc;
  cache.pooled.resize(dataset.frames.size());
  for (size_t f = 0; f < dataset.frames.size(); ++f)
    for (int v = 0; v < 2; ++v)
      cache.pooled[f][static_cast<size_t>(v)] = pool_patches(dataset.images[f][static_cast<size_t>(v)], mc);

  TrainResult result;
  result.params.cfg = mc;
  result.params.init(cfg.seed);
  auto reg = result.params.registry();
  Adam adam(reg);

  const int n_threads = cfg.threads > 0
                            ? cfg.threads
                            : std::max(1u, std::thread::hardware_concurrency());
  Rng shuffle_rng = make_rng(cfg.seed, RngStream::BatchShuffle);
  std::vector<size_t> order(dataset.frames.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  long global_step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double lr_e = cfg.lr;
    for (int mstone : cfg.milestones)
      if (epoch >= mstone) lr_e *= cfg.lr_ratio;

    // Fisher-Yates, deterministic in the seed.
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = shuffle_rng.uniform_int(i);
      std::swap(order[i - 1], order[j]);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr_e;
    long batches = 0;
    for (size_t bs = 0; bs < order.size(); bs += static_cast<size_t>(cfg.batch)) {
      const size_t be = std::min(order.size(), bs + static_cast<size_t>(cfg.batch));
      const int bn = static_cast<int>(be - bs);
      std::vector<GradResult> results(static_cast<size_t>(bn));
      std::vector<std::string> errors(static_cast<size_t>(n_threads));

      auto worker = [&](int tid) {
        try {
          for (int i = tid; i < bn; i += n_threads) {
            const size_t f = order[bs + static_cast<size_t>(i)];
            const Tensor gt1 = cache.gt_tensor(f, 0);
            const Tensor gt2 = cache.gt_tensor(f, 1);
            results[static_cast<size_t>(i)] =
                grad_all(result.params, geo, cache.pooled[f][0], cache.pooled[f][1], gt1, gt2);
          }
        } catch (const std::exception& e) {
          errors[static_cast<size_t>(tid)] = e.what();
        }
      };
      if (n_threads == 1) {
        worker(0);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, t);
        for (std::thread& t : pool) t.join();
      }
      for (const std::string& err : errors)
        if (!err.empty())
          throw NonFinite("training failed at step " + std::to_string(global_step) + ": " + err);

      // Merge gradients in sample order regardless of which thread ran them.
      std::vector<Tensor> merged = results[0].grads;
      for (int i = 1; i < bn; ++i)
        for (size_t t = 0; t < merged.size(); ++t)
          for (size_t e = 0; e < merged[t].data.size(); ++e)
            merged[t].data[e] += results[static_cast<size_t>(i)].grads[t].data[e];
      const double inv = 1.0 / bn;
      for (Tensor& t : merged)
        for (double& e : t.data) e *= inv;

      adam.apply(reg, merged, lr_e);
      ++global_step;
      ++batches;
      for (int i = 0; i < bn; ++i) {
        stats.loss += results[static_cast<size_t>(i)].loss;
        stats.hm_loss += results[static_cast<size_t>(i)].hm_loss;
        stats.lpos += results[static_cast<size_t>(i)].lpos;
      }
    }
    const double inv_n = 1.0 / static_cast<double>(order.size());
    stats.loss *= inv_n;
    stats.hm_loss *= inv_n;
    stats.lpos *= inv_n;
    result.epochs.push_back(stats);
  }
  return result;
}

std::string epoch_csv(const std::vector<EpochStats>& stats) {
  std::ostringstream os;
  os << "schema,epoch,loss,heatmap_loss,lpos_loss,lr\n";
  os.setf(std::ios::fmtflags(0), std::ios::floatfield);
  os.precision(10);
  for (const EpochStats& s : stats)
    os << "v1," << s.epoch << "," << s.loss << "," << s.hm_loss << "," << s.lpos << "," << s.lr
       << "\n";
  return os.str();
}

void write_epoch_csv(const std::string& path, const std::vector<EpochStats>& stats) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << epoch_csv(stats);
}

}  // namespace epifusion
