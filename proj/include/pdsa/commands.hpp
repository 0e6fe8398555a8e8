#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pdsa/checkpoint.hpp"
#include "pdsa/config.hpp"
#include "pdsa/dataset.hpp"
#include "pdsa/metrics.hpp"
#include "pdsa/network.hpp"
#include "pdsa/optim.hpp"
#include "pdsa/ply_io.hpp"

namespace pdsa {

struct PreparedObject {
  PointCloud cloud;
  int label = 0;
  EncoderPlan<float> plan;
};

struct ModelState {
  ParamStore<float> store;
  ModelIds ids;
};

inline ModelState init_model(const RunConfig& cfg) {
  ModelState st;
  Rng rng(cfg.train.seed);
  st.ids = build_model(st.store, cfg.model, rng);
  return st;
}

inline std::vector<PreparedObject> prepare_objects(const std::vector<LabeledCloud>& objs,
                                                   const ModelConfig& cfg) {
  std::vector<PreparedObject> out;
  out.reserve(objs.size());
  for (const LabeledCloud& o : objs) {
    PreparedObject p;
    p.cloud = o.cloud;
    p.label = o.label;
    p.plan = build_encoder_plan<float>(p.cloud, cfg);
    out.push_back(std::move(p));
  }
  return out;
}

struct PreparedData {
  std::vector<LabeledCloud> train_raw;  // kept for per-epoch augmentation
  std::vector<PreparedObject> train;
  std::vector<PreparedObject> test;
};

inline PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  d.train_raw = make_split(cfg.data, false);
  d.train = prepare_objects(d.train_raw, cfg.model);
  d.test = prepare_objects(make_split(cfg.data, true), cfg.model);
  return d;
}

inline int predict_label(const ParamStore<float>& store, const ModelIds& ids,
                         const ModelConfig& cfg, const EncoderPlan<float>& plan) {
  Tape<float> tape;
  Var logits = model_logits(tape, store, ids, cfg, plan);
  const Tensor<float>& v = tape.value(logits);
  const auto* row = v.data.data();
  return static_cast<int>(std::max_element(row, row + v.cols()) - row);
}

inline MetricsReport evaluate_objects(const ParamStore<float>& store, const ModelIds& ids,
                                      const ModelConfig& cfg,
                                      const std::vector<PreparedObject>& objs) {
  std::vector<int> pred, truth;
  pred.reserve(objs.size());
  truth.reserve(objs.size());
  for (const PreparedObject& o : objs) {
    pred.push_back(predict_label(store, ids, cfg, o.plan));
    truth.push_back(o.label);
  }
  return compute_metrics(pred, truth, cfg.n_classes);
}

/// Mean over all objects and first-block neighborhoods of the corrected
/// neighbor matrix's row variance (the denoising proxy tracked by ablations).
inline double mean_block0_variance(const ParamStore<float>& store, const ModelIds& ids,
                                   const ModelConfig& cfg,
                                   const std::vector<PreparedObject>& objs) {
  double sum = 0.0;
  std::int64_t count = 0;
  for (const PreparedObject& o : objs) {
    Tape<float> tape;
    std::vector<BlockTrace<float>> traces;
    encoder_forward(tape, store, ids, cfg, o.plan, &traces);
    const Tensor<float>& f_n = traces[0].f_n;
    const std::int64_t k = o.plan.blocks[0].k;
    const std::int64_t c = f_n.cols();
    for (std::int64_t i = 0; i < f_n.rows() / k; ++i) {
      sum += neighbor_row_variance(f_n.data.data() + i * k * c, k, c).mean_var;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

struct EpochRow {
  int epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

inline std::string format_epoch_row(const EpochRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g", r.epoch, r.loss, r.train_acc, r.test_acc);
  return buf;
}

struct TrainOutcome {
  std::vector<EpochRow> rows;
  double final_test_acc = 0.0;
  double best_test_acc = 0.0;
  int best_epoch = 0;
  double seconds = 0.0;
};

struct TrainSinks {
  std::string log_path;    // per-epoch CSV; empty skips the file
  std::string final_ckpt;  // written after the last epoch
  std::string best_ckpt;   // written whenever test accuracy improves
  std::ostream* progress = nullptr;
};

namespace detail {

struct ShardResult {
  std::vector<std::vector<float>> grads;
  double loss_sum = 0.0;
  int correct = 0;
};

template <typename Objs>
void run_shard(const ParamStore<float>& store, const ModelIds& ids, const ModelConfig& cfg,
               const Objs& objs, const std::vector<int>& order, std::size_t begin, std::size_t end,
               float scale, float smoothing, ShardResult& out) {
  out.grads.assign(store.size(), {});
  for (std::size_t i = begin; i < end; ++i) {
    const auto& o = objs[static_cast<std::size_t>(order[i])];
    Tape<float> tape;
    Var logits = model_logits(tape, store, ids, cfg, o.plan);
    const Tensor<float>& lv = tape.value(logits);
    const auto* row = lv.data.data();
    if (static_cast<int>(std::max_element(row, row + lv.cols()) - row) == o.label) ++out.correct;
    Var loss = tape.cross_entropy_label_smoothing(logits, {o.label}, smoothing);
    out.loss_sum += static_cast<double>(tape.value(loss).data[0]);
    tape.backward(loss);
    tape.accumulate_param_grads_into(out.grads, scale);
  }
}

}  // namespace detail

inline TrainOutcome run_training(const RunConfig& cfg, ModelState& st, PreparedData& data,
                                 const TrainSinks& sinks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome out;

  std::ofstream log;
  if (!sinks.log_path.empty()) {
    log.open(sinks.log_path, std::ios::trunc);
    if (!log) throw std::runtime_error("cmd_train: cannot open log '" + sinks.log_path + "'");
    log << "epoch,loss,train_acc,test_acc\n";
    log.flush();
  }

  AdamWConfig oc;
  oc.lr = cfg.train.lr;
  oc.weight_decay = cfg.train.weight_decay;
  AdamW<float> opt(oc);
  Rng shuffle_rng(cfg.train.seed + 0x9e3779b97f4a7c15ull);
  const float smoothing = static_cast<float>(cfg.train.smoothing);
  const int n_train = static_cast<int>(data.train.size());
  const int batch = std::max(1, cfg.train.batch);
  const int threads = std::max(1, cfg.train.threads);

  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    if (cfg.train.augment) {
      Rng aug_rng(cfg.train.seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = 0; i < data.train_raw.size(); ++i) {
        data.train[i].cloud = augment_cloud(data.train_raw[i].cloud, aug_rng);
        data.train[i].plan = build_encoder_plan<float>(data.train[i].cloud, cfg.model);
      }
    }
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < n_train; start += batch) {
      const int bsz = std::min(batch, n_train - start);
      const float scale = 1.0f / static_cast<float>(bsz);
      st.store.zero_grad();

      const int n_shards = std::min(threads, bsz);
      std::vector<detail::ShardResult> shard(static_cast<std::size_t>(n_shards));
      if (n_shards == 1) {
        detail::run_shard(st.store, st.ids, cfg.model, data.train, order,
                          static_cast<std::size_t>(start), static_cast<std::size_t>(start + bsz),
                          scale, smoothing, shard[0]);
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n_shards; ++w) {
          const std::size_t b = static_cast<std::size_t>(start + (bsz * w) / n_shards);
          const std::size_t e = static_cast<std::size_t>(start + (bsz * (w + 1)) / n_shards);
          pool.emplace_back([&, b, e, w] {
            detail::run_shard(st.store, st.ids, cfg.model, data.train, order, b, e, scale,
                              smoothing, shard[static_cast<std::size_t>(w)]);
          });
        }
        for (auto& t : pool) t.join();
      }

      double batch_loss = 0.0;
      for (const auto& s : shard) {
        batch_loss += s.loss_sum;
        correct += s.correct;
        for (std::size_t e = 0; e < s.grads.size(); ++e) {
          if (s.grads[e].empty()) continue;
          auto& g = st.store.at(static_cast<int>(e)).grad;
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += s.grads[e][i];
        }
      }
      loss_sum += batch_loss;
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("cmd_train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at object " + std::to_string(start));
      opt.step(st.store);
    }

    EpochRow row;
    row.epoch = epoch;
    row.loss = loss_sum / std::max(1, n_train);
    row.train_acc = static_cast<double>(correct) / std::max(1, n_train);
    row.test_acc = evaluate_objects(st.store, st.ids, cfg.model, data.test).oa;
    out.rows.push_back(row);
    out.final_test_acc = row.test_acc;
    const std::string line = format_epoch_row(row);
    if (log) {
      log << line << '\n';
      log.flush();
    }
    if (sinks.progress) (*sinks.progress) << line << '\n';

    if (out.rows.size() == 1 || row.test_acc > out.best_test_acc) {
      out.best_test_acc = row.test_acc;
      out.best_epoch = epoch;
      if (!sinks.best_ckpt.empty()) save_checkpoint(sinks.best_ckpt, st.store);
    }
  }

  if (!sinks.final_ckpt.empty()) save_checkpoint(sinks.final_ckpt, st.store);
  if (cfg.train.epochs == 0 && !sinks.best_ckpt.empty()) save_checkpoint(sinks.best_ckpt, st.store);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

namespace detail {

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::string ensure_out_dir(const RunConfig& cfg) {
  const std::string dir = cfg.out_dir();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output dir '" + dir + "': " + ec.message());
  write_text_file(join_path(dir, "config_effective.txt"), render_config(cfg));
  return dir;
}

}  // namespace detail

inline int cmd_train(const RunConfig& cfg, std::ostream& os = std::cout) {
  cfg.model.validate();
  const std::string dir = detail::ensure_out_dir(cfg);
  PreparedData data = prepare_data(cfg);
  ModelState st = init_model(cfg);
  TrainSinks sinks;
  sinks.log_path = detail::join_path(dir, "train_log.csv");
  sinks.final_ckpt = detail::join_path(dir, "final.ckpt");
  sinks.best_ckpt = detail::join_path(dir, "best.ckpt");
  sinks.progress = &os;
  os << "epoch,loss,train_acc,test_acc\n";
  TrainOutcome out = run_training(cfg, st, data, sinks);
  os << "trained " << cfg.train.epochs << " epochs in " << out.seconds << "s; best test_acc "
     << out.best_test_acc << " at epoch " << out.best_epoch << '\n';
  return 0;
}

inline ModelState load_model(const RunConfig& cfg) {
  if (cfg.io.checkpoint.empty())
    throw std::invalid_argument("io.checkpoint must name a checkpoint file");
  ModelState st = init_model(cfg);
  load_checkpoint_into(cfg.io.checkpoint, st.store);
  return st;
}

inline int cmd_eval(const RunConfig& cfg, std::ostream& os = std::cout) {
  cfg.model.validate();
  const std::string dir = detail::ensure_out_dir(cfg);
  ModelState st = load_model(cfg);
  const bool on_train = cfg.eval.split == "train";
  std::vector<PreparedObject> objs = prepare_objects(make_split(cfg.data, !on_train), cfg.model);
  MetricsReport report = evaluate_objects(st.store, st.ids, cfg.model, objs);
  const std::string csv = metrics_csv(report, class_names());
  detail::write_text_file(detail::join_path(dir, "metrics.csv"), csv);
  os << csv;
  std::cerr << "oa " << report.oa << "  miou " << report.miou << "  macc " << report.macc << '\n';
  return 0;
}

struct AblateVariant {
  const char* name;       // CSV display name
  const char* file_tag;   // checkpoint file stem
  bool cdip, dw, cics;
};

inline const std::vector<AblateVariant>& ablate_ladder() {
  static const std::vector<AblateVariant> ladder = {
      {"baseline", "baseline", false, false, false},
      {"+CDIP", "cdip", true, false, false},
      {"+CDIP+Dw", "cdip_dw", true, true, false},
      {"+CDIP+Dw+CICS", "cdip_dw_cics", true, true, true},
  };
  return ladder;
}

inline int cmd_ablate(const RunConfig& cfg, std::ostream& os = std::cout) {
  cfg.model.validate();
  if (cfg.ablate_seeds < 1) throw std::invalid_argument("ablate.seeds must be >= 1");
  const std::string dir = detail::ensure_out_dir(cfg);
  std::ostringstream csv;
  csv << "variant,seed,test_oa,mean_nbr_var\n";
  os << "variant,seed,test_oa,mean_nbr_var\n";
  for (const AblateVariant& v : ablate_ladder()) {
    RunConfig vc = cfg;
    vc.model.cdip = v.cdip;
    vc.model.dw = v.dw;
    vc.model.cics = v.cics;
    PreparedData data = prepare_data(vc);
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
      vc.train.seed = cfg.train.seed + static_cast<std::uint64_t>(s);
      ModelState st = init_model(vc);
      TrainSinks sinks;
      sinks.final_ckpt = detail::join_path(
          dir, "ablate_" + std::string(v.file_tag) + "_s" + std::to_string(s) + ".ckpt");
      run_training(vc, st, data, sinks);
      const double oa = evaluate_objects(st.store, st.ids, vc.model, data.test).oa;
      const double var = mean_block0_variance(st.store, st.ids, vc.model, data.test);
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s,%d,%.9g,%.9g\n", v.name, s, oa, var);
      csv << buf;
      os << buf << std::flush;
    }
  }
  detail::write_text_file(detail::join_path(dir, "ablate.csv"), csv.str());
  return 0;
}

struct HeatResult {
  std::vector<double> heat;  // per input point, normalized to [0,1]
  PointCloud keys;           // coordinates of the selected first-stage keys
};

/// Heat = per input point, the summed channel-mean attention weight it
/// receives as a member across first-stage neighborhoods (uniform 1/k when
/// the correction is disabled), scaled so the maximum is 1.
inline HeatResult compute_heat(const ParamStore<float>& store, const ModelIds& ids,
                               const ModelConfig& cfg, const PointCloud& cloud) {
  EncoderPlan<float> plan = build_encoder_plan<float>(cloud, cfg);
  Tape<float> tape;
  std::vector<BlockTrace<float>> traces;
  encoder_forward(tape, store, ids, cfg, plan, &traces);
  const BlockTrace<float>& tr = traces[0];
  const StageGeom& geom = plan.blocks[0];
  const std::int64_t k = geom.k;

  HeatResult out;
  out.heat.assign(cloud.size(), 0.0);
  std::int64_t row = 0;
  for (const Neighborhood& nbh : geom.nbhs) {
    for (int s = 0; s < k; ++s, ++row) {
      double w;
      if (tr.w_re.numel() > 0) {
        const std::int64_t c = tr.w_re.cols();
        double acc = 0.0;
        for (std::int64_t ch = 0; ch < c; ++ch)
          acc += static_cast<double>(tr.w_re.data[static_cast<std::size_t>(row * c + ch)]);
        w = acc / static_cast<double>(c);
      } else {
        w = 1.0 / static_cast<double>(k);
      }
      out.heat[static_cast<std::size_t>(nbh.members[static_cast<std::size_t>(s)])] += w;
    }
  }
  double mx = 0.0;
  for (double h : out.heat) mx = std::max(mx, h);
  if (mx > 0.0)
    for (double& h : out.heat) h /= mx;

  for (int key : tr.keys.keys)
    out.keys.coords.push_back(geom.coords[static_cast<std::size_t>(key)]);
  return out;
}

inline int cmd_inspect(const RunConfig& cfg, const std::string& input_path,
                       std::ostream& os = std::cout) {
  cfg.model.validate();
  if (input_path.empty()) throw std::invalid_argument("inspect requires an input cloud path");
  const std::string dir = detail::ensure_out_dir(cfg);
  ModelState st = load_model(cfg);
  CloudFile in = read_cloud(input_path);
  HeatResult hr = compute_heat(st.store, st.ids, cfg.model, in.cloud);
  const std::string heat_path = detail::join_path(dir, "heat.ply");
  const std::string keys_path = detail::join_path(dir, "keys.ply");
  write_cloud(heat_path, in.cloud, &hr.heat);
  write_cloud(keys_path, hr.keys);
  os << "wrote " << heat_path << " (" << in.cloud.size() << " points) and " << keys_path << " ("
     << hr.keys.size() << " key points)\n";
  return 0;
}

}  // namespace pdsa
