#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/cdip.hpp"
#include "pdsa/cics.hpp"
#include "pdsa/descriptor.hpp"
#include "pdsa/layers.hpp"
#include "pdsa/point_cloud.hpp"
#include "pdsa/sampling.hpp"
#include "pdsa/tape.hpp"
#include "pdsa/tensor.hpp"

namespace pdsa {

struct StageSpec {
  int stride = 4;
  double radius = 0.4;
  int k = 16;
};

struct ModelConfig {
  std::string variant = "pdsa";  // pdsa | sa_baseline
  int channels = 16;
  int la_blocks = 0;  // extra stride-1 block repeats per stage
  std::vector<StageSpec> stages = {{4, 0.4, 16}, {4, 0.8, 16}};
  int a_dim = 3;
  int h = 16;  // CDIP hidden width
  double rho = 0.25;
  bool cdip = true;
  bool dw = true;
  bool cics = true;
  bool ph_descriptor = false;  // octant-centroid descriptor fixture
  int n_classes = 4;

  bool baseline() const { return variant == "sa_baseline"; }
  bool use_cdip() const { return !baseline() && cdip; }
  bool use_dw() const { return !baseline() && dw; }
  bool use_cics() const { return !baseline() && cics; }

  void validate() const {
    if (variant != "pdsa" && variant != "sa_baseline")
      throw std::invalid_argument("ModelConfig: unknown variant '" + variant + "'");
    if (channels < 1) throw std::invalid_argument("ModelConfig: channels must be >= 1");
    if (la_blocks < 0) throw std::invalid_argument("ModelConfig: la_blocks must be >= 0");
    if (stages.empty()) throw std::invalid_argument("ModelConfig: at least one stage required");
    for (const auto& s : stages) {
      if (s.stride < 1) throw std::invalid_argument("ModelConfig: strides must be >= 1");
      if (!(s.radius > 0)) throw std::invalid_argument("ModelConfig: radii must be positive");
      if (s.k < 1) throw std::invalid_argument("ModelConfig: k must be >= 1");
    }
    if (a_dim < 1) throw std::invalid_argument("ModelConfig: a_dim must be >= 1");
    if (h < 1) throw std::invalid_argument("ModelConfig: h must be >= 1");
    if (!(rho > 0 && rho <= 1)) throw std::invalid_argument("ModelConfig: rho must be in (0,1]");
    if (n_classes < 2) throw std::invalid_argument("ModelConfig: n_classes must be >= 2");
  }
};

/// Flattened per-block layout: each configured stage contributes one
/// downsampling block followed by la_blocks stride-1 repeats; feature width
/// doubles per stage; descriptor width advances 8 -> 8*a_dim after the first
/// aggregation (constant 24 in octant-centroid mode).
struct BlockSpec {
  int stride = 1;
  double radius = 0;
  int k = 0;
  std::int64_t c_in = 0;
  std::int64_t c_out = 0;
  std::int64_t d_in = 0;
  std::int64_t d_out = 0;
};

inline std::vector<BlockSpec> block_specs(const ModelConfig& cfg) {
  std::vector<BlockSpec> out;
  std::int64_t c_prev = 0;
  std::int64_t d_prev = cfg.ph_descriptor ? 24 : 8;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    const std::int64_t c_out = static_cast<std::int64_t>(cfg.channels) << s;
    for (int rep = 0; rep <= cfg.la_blocks; ++rep) {
      BlockSpec b;
      b.stride = rep == 0 ? cfg.stages[s].stride : 1;
      b.radius = cfg.stages[s].radius;
      b.k = cfg.stages[s].k;
      b.c_in = c_prev;
      b.c_out = c_out;
      b.d_in = d_prev;
      b.d_out = cfg.ph_descriptor ? 24 : 8 * static_cast<std::int64_t>(cfg.a_dim);
      out.push_back(b);
      c_prev = b.c_out;
      d_prev = b.d_out;
    }
  }
  return out;
}

struct BlockIds {
  EmbedIds embed;
  LinearIds compress;
  CdipIds cdip;
  SatIds sat;
};

struct ModelIds {
  std::vector<BlockIds> blocks;
  MlpIds head;
};

/// Registers every parameter the model can use, independent of the ablation
/// flags, so checkpoints stay layout-compatible across the ablation ladder
/// and all variants share identical initial draws.
template <typename T>
ModelIds build_model(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelIds ids;
  const auto specs = block_specs(cfg);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const BlockSpec& b = specs[i];
    const std::string prefix = "b" + std::to_string(i);
    BlockIds bi;
    bi.embed = add_embed(store, prefix + ".embed", b.c_out, b.c_in + 3, rng);
    bi.compress = add_linear(store, prefix + ".compress", cfg.a_dim, b.d_in, rng);
    bi.cdip = add_cdip_params(store, prefix + ".cdip", b.d_out, b.d_in, cfg.h, b.c_out, rng);
    bi.sat = add_sat_params(store, prefix + ".sat", b.d_out, b.d_out, b.c_out, rng);
    ids.blocks.push_back(bi);
  }
  const std::int64_t c_final = specs.back().c_out;
  ids.head = add_mlp(store, "head", c_final, cfg.n_classes, c_final, rng);
  return ids;
}

/// Geometry of one grouping step: centers into the block's input rows plus
/// their neighborhoods and output coordinates. Pure function of coordinates,
/// so it can be computed once per cloud and reused across epochs.
struct StageGeom {
  std::vector<int> centers;
  std::vector<Neighborhood> nbhs;
  std::vector<Vec3> coords;
  double radius = 0;
  int k = 0;
};

template <typename T>
struct EncoderPlan {
  std::int64_t n_input = 0;
  std::vector<Vec3> input_coords;
  Tensor<T> d0;
  std::vector<StageGeom> blocks;
  std::vector<Tensor<T>> ph;  // per-block octant-centroid descriptors, if enabled
};

template <typename T>
EncoderPlan<T> build_encoder_plan(const PointCloud& cloud, const ModelConfig& cfg) {
  cfg.validate();
  cloud.validate();
  const auto specs = block_specs(cfg);
  EncoderPlan<T> plan;
  plan.n_input = static_cast<std::int64_t>(cloud.size());
  plan.input_coords = cloud.coords;

  // Base descriptor: one neighborhood per input point at the first block's
  // grouping scale.
  {
    std::vector<int> all(cloud.size());
    std::iota(all.begin(), all.end(), 0);
    PointCloud bare;
    bare.coords = cloud.coords;
    auto init_nbhs = ball_query_group(bare, all, specs[0].radius, specs[0].k);
    plan.d0 = cfg.ph_descriptor ? ph_centroid_descriptor<T>(init_nbhs)
                                : init_descriptor<T>(init_nbhs, specs[0].radius, cfg.use_dw());
  }

  std::vector<Vec3> working = cloud.coords;
  for (const BlockSpec& spec : specs) {
    const int m_in = static_cast<int>(working.size());
    if (spec.stride > m_in)
      throw std::invalid_argument("build_encoder_plan: stride " + std::to_string(spec.stride) +
                                  " exceeds point count " + std::to_string(m_in));
    PointCloud stage_cloud;
    stage_cloud.coords = working;
    StageGeom geom;
    geom.radius = spec.radius;
    geom.k = spec.k;
    if (spec.stride == 1) {
      geom.centers.resize(working.size());
      std::iota(geom.centers.begin(), geom.centers.end(), 0);
    } else {
      const int m_out = (m_in + spec.stride - 1) / spec.stride;
      geom.centers = farthest_point_sample(stage_cloud, m_out, 0);
    }
    geom.nbhs = ball_query_group(stage_cloud, geom.centers, spec.radius, spec.k);
    geom.coords.reserve(geom.centers.size());
    for (int c : geom.centers) geom.coords.push_back(working[static_cast<std::size_t>(c)]);
    if (cfg.ph_descriptor) plan.ph.push_back(ph_centroid_descriptor<T>(geom.nbhs));
    working = geom.coords;
    plan.blocks.push_back(std::move(geom));
  }
  return plan;
}

struct BlockFlags {
  bool cdip = true;
  bool dw = true;
  bool cics = true;
  double rho = 0.25;
  bool ph = false;
};

inline BlockFlags block_flags(const ModelConfig& cfg) {
  return {cfg.use_cdip(), cfg.use_dw(), cfg.use_cics(), cfg.rho, cfg.ph_descriptor};
}

template <typename T>
struct StageVars {
  Var features;    // [M x c]; invalid at the raw-input stage (coordinates only)
  Var descriptor;  // [M x d]
};

template <typename T>
struct BlockTrace {
  Tensor<T> w_re;    // member weights, when CDIP ran
  Tensor<T> f_n;     // corrected neighbor matrix [M*k x c]
  Tensor<T> f_base;  // same matrix before member correction
  KeySelection keys;
  bool used_keypoint = false;
};

namespace detail {

template <typename T>
Tensor<T> rel_tensor(const StageGeom& geom) {
  const std::int64_t m = static_cast<std::int64_t>(geom.nbhs.size());
  const std::int64_t k = geom.k;
  Tensor<T> rel({m * k, 3});
  std::int64_t row = 0;
  for (const auto& nbh : geom.nbhs)
    for (const auto& r : nbh.rel) {
      rel.data[static_cast<std::size_t>(row * 3 + 0)] = static_cast<T>(r[0]);
      rel.data[static_cast<std::size_t>(row * 3 + 1)] = static_cast<T>(r[1]);
      rel.data[static_cast<std::size_t>(row * 3 + 2)] = static_cast<T>(r[2]);
      ++row;
    }
  return rel;
}

inline std::vector<std::int64_t> member_rows(const StageGeom& geom) {
  std::vector<std::int64_t> idx;
  idx.reserve(geom.nbhs.size() * static_cast<std::size_t>(geom.k));
  for (const auto& nbh : geom.nbhs)
    for (int mmb : nbh.members) idx.push_back(mmb);
  return idx;
}

}  // namespace detail

/// One PDSA block: group -> embed members -> aggregate descriptor -> CDIP
/// correction -> max-pool -> CICS correction. With every flag off this is
/// exactly the classic set-abstraction block (the descriptor is still
/// aggregated so stage interfaces stay uniform, but features never see it).
template <typename T>
StageVars<T> pdsa_forward(Tape<T>& tape, const ParamStore<T>& store, const BlockIds& ids,
                          const BlockFlags& flags, const StageVars<T>& in, const StageGeom& geom,
                          const Tensor<T>* ph_desc = nullptr, BlockTrace<T>* trace = nullptr) {
  const std::int64_t m = static_cast<std::int64_t>(geom.nbhs.size());
  const std::int64_t k = geom.k;

  Var rel = tape.input(detail::rel_tensor<T>(geom));
  auto members = detail::member_rows(geom);

  Var base_in = rel;
  if (in.features.valid()) {
    Var f_members = tape.gather_rows(in.features, members);
    base_in = tape.concat_cols(f_members, rel);
  }
  Var base = apply_embed(tape, store, ids.embed, base_in);

  Var d_next;
  if (flags.ph) {
    if (!ph_desc) throw std::invalid_argument("pdsa_forward: missing octant-centroid descriptor");
    d_next = tape.input(*ph_desc);
  } else {
    Var a = apply_linear(tape, store, ids.compress, in.descriptor);
    d_next = aggregate_descriptor(tape, a, geom.nbhs, geom.radius, flags.dw);
  }

  Var f_n = base;
  const Tensor<T>* w_re_values = nullptr;
  Tensor<T> w_re_copy;
  const bool need_w_re = trace || (flags.cics && m > kSatFullMaxPoints);
  if (flags.cdip) {
    Var q = apply_linear(tape, store, ids.cdip.lq, d_next);
    Var k_all = apply_linear(tape, store, ids.cdip.lk, in.descriptor);
    Var k_members = tape.gather_rows(k_all, members);
    CdipOut corr = cdip_from_embeddings(tape, store, ids.cdip, q, k_members, k);
    f_n = corrected_neighbor_features(tape, base, corr);
    if (need_w_re) {
      // node storage may move as later ops push nodes, so take a copy
      w_re_copy = tape.value(corr.w_re);
      w_re_values = &w_re_copy;
    }
  }

  Var pooled = tape.max_groups(f_n, k).value;

  StageVars<T> out;
  out.descriptor = d_next;
  if (flags.cics) {
    if (m <= kSatFullMaxPoints) {
      Var corr = sat_full(tape, store, ids.sat, d_next);
      out.features = apply_cics(tape, pooled, corr);
      if (trace) {
        trace->keys =
            select_key_points(w_re_values, geom.nbhs, geom.centers, geom.coords, flags.rho);
        trace->used_keypoint = false;
      }
    } else {
      KeySelection sel =
          select_key_points(w_re_values, geom.nbhs, geom.centers, geom.coords, flags.rho);
      Var corr = sat_keypoint(tape, store, ids.sat, d_next, sel);
      out.features = apply_cics(tape, pooled, corr);
      if (trace) {
        trace->keys = std::move(sel);
        trace->used_keypoint = true;
      }
    }
  } else {
    out.features = pooled;
    if (trace)
      trace->keys = select_key_points(w_re_values, geom.nbhs, geom.centers, geom.coords, flags.rho);
  }
  if (trace) {
    if (w_re_values) trace->w_re = w_re_copy;
    trace->f_n = tape.value(f_n);
    trace->f_base = tape.value(base);
  }
  return out;
}

/// Classic SA block: identical code path with every correction disabled.
template <typename T>
StageVars<T> sa_baseline_forward(Tape<T>& tape, const ParamStore<T>& store, const BlockIds& ids,
                                 const StageVars<T>& in, const StageGeom& geom,
                                 const Tensor<T>* ph_desc = nullptr,
                                 BlockTrace<T>* trace = nullptr) {
  BlockFlags off;
  off.cdip = off.dw = off.cics = false;
  off.ph = ph_desc != nullptr;
  return pdsa_forward(tape, store, ids, off, in, geom, ph_desc, trace);
}

template <typename T>
struct EncoderOut {
  std::vector<StageVars<T>> stages;
  Var d0;
  Var features() const { return stages.back().features; }
};

template <typename T>
EncoderOut<T> encoder_forward(Tape<T>& tape, const ParamStore<T>& store, const ModelIds& ids,
                              const ModelConfig& cfg, const EncoderPlan<T>& plan,
                              std::vector<BlockTrace<T>>* traces = nullptr) {
  if (ids.blocks.size() != plan.blocks.size())
    throw std::invalid_argument("encoder_forward: plan does not match model block count");
  const BlockFlags flags = block_flags(cfg);
  EncoderOut<T> out;
  out.d0 = tape.input(plan.d0);
  StageVars<T> state;
  state.descriptor = out.d0;
  if (traces) traces->resize(plan.blocks.size());
  for (std::size_t l = 0; l < plan.blocks.size(); ++l) {
    const Tensor<T>* ph = cfg.ph_descriptor ? &plan.ph[l] : nullptr;
    BlockTrace<T>* tr = traces ? &(*traces)[l] : nullptr;
    state = pdsa_forward(tape, store, ids.blocks[l], flags, state, plan.blocks[l], ph, tr);
    out.stages.push_back(state);
  }
  return out;
}

/// Global max-pool over the final stage followed by the classification MLP.
template <typename T>
Var classify_head(Tape<T>& tape, const ParamStore<T>& store, const MlpIds& head, Var features) {
  Var pooled = tape.max_groups(features, tape.value(features).rows()).value;
  return apply_mlp(tape, store, head, pooled);
}

template <typename T>
Var model_logits(Tape<T>& tape, const ParamStore<T>& store, const ModelIds& ids,
                 const ModelConfig& cfg, const EncoderPlan<T>& plan,
                 std::vector<BlockTrace<T>>* traces = nullptr) {
  EncoderOut<T> enc = encoder_forward(tape, store, ids, cfg, plan, traces);
  return classify_head(tape, store, ids.head, enc.features());
}

/// Inverse-distance feature propagation: each fine point takes the
/// normalized 1/d-weighted blend of its (up to) 3 nearest coarse points,
/// concatenated with skip features when given, then one embed layer.
template <typename T>
Var fp_interpolate(Tape<T>& tape, const ParamStore<T>& store, const EmbedIds& mlp,
                   const std::vector<Vec3>& coarse_coords, Var coarse_features,
                   const std::vector<Vec3>& fine_coords, Var fine_skip = {}) {
  if (coarse_coords.empty()) throw std::invalid_argument("fp_interpolate: empty coarse set");
  const std::int64_t n_fine = static_cast<std::int64_t>(fine_coords.size());
  const int take = std::min<int>(3, static_cast<int>(coarse_coords.size()));
  std::vector<ScatterTerm> terms;
  terms.reserve(static_cast<std::size_t>(n_fine) * static_cast<std::size_t>(take));
  std::vector<std::pair<double, int>> cand(coarse_coords.size());
  for (std::int64_t i = 0; i < n_fine; ++i) {
    for (std::size_t j = 0; j < coarse_coords.size(); ++j)
      cand[j] = {sq_dist(fine_coords[static_cast<std::size_t>(i)], coarse_coords[j]),
                 static_cast<int>(j)};
    std::partial_sort(cand.begin(), cand.begin() + take, cand.end());
    double wsum = 0.0;
    double w[3] = {};
    for (int t = 0; t < take; ++t) {
      w[t] = 1.0 / std::max(std::sqrt(cand[static_cast<std::size_t>(t)].first), 1e-8);
      wsum += w[t];
    }
    for (int t = 0; t < take; ++t) {
      ScatterTerm term;
      term.src = cand[static_cast<std::size_t>(t)].second;
      term.dst = i;
      term.block = 0;
      term.weight = w[t] / wsum;
      terms.push_back(term);
    }
  }
  Var interp = tape.scatter_blocks(coarse_features, std::move(terms), n_fine, 1);
  Var x = fine_skip.valid() ? tape.concat_cols(interp, fine_skip) : interp;
  return apply_embed(tape, store, mlp, x);
}

struct DecoderIds {
  std::vector<EmbedIds> fp;  // one per encoder block, applied coarsest-first
  LinearIds seg;
};

template <typename T>
DecoderIds build_decoder(ParamStore<T>& store, const ModelConfig& cfg, Rng& rng) {
  const auto specs = block_specs(cfg);
  DecoderIds ids;
  for (std::size_t l = specs.size(); l-- > 0;) {
    // incoming width at this step equals specs[l].c_out because stage widths chain
    const std::int64_t c_skip = specs[l].c_in;  // 0 at the raw-input level
    const std::int64_t c_out = std::max<std::int64_t>(specs[l].c_in, cfg.channels);
    ids.fp.push_back(
        add_embed(store, "dec" + std::to_string(l) + ".fp", c_out, specs[l].c_out + c_skip, rng));
  }
  ids.seg = add_linear(store, "dec.seg", cfg.n_classes, cfg.channels, rng);
  return ids;
}

/// Mirrors the encoder back to input resolution and emits per-point logits.
template <typename T>
Var decoder_forward(Tape<T>& tape, const ParamStore<T>& store, const DecoderIds& ids,
                    const EncoderPlan<T>& plan, const EncoderOut<T>& enc) {
  Var f = enc.features();
  std::size_t step = 0;
  for (std::size_t l = plan.blocks.size(); l-- > 0; ++step) {
    const std::vector<Vec3>& fine =
        l == 0 ? plan.input_coords : plan.blocks[l - 1].coords;
    Var skip = l == 0 ? Var{} : enc.stages[l - 1].features;
    f = fp_interpolate(tape, store, ids.fp[step], plan.blocks[l].coords, f, fine, skip);
  }
  return apply_linear(tape, store, ids.seg, f);
}

}  // namespace pdsa
