#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "lmdet/codec.hpp"
#include "lmdet/dataset.hpp"
#include "lmdet/error.hpp"
#include "lmdet/loss.hpp"
#include "lmdet/model.hpp"
#include "lmdet/optim.hpp"
#include "lmdet/report.hpp"
#include "lmdet/runconfig.hpp"
#include "lmdet/tensor.hpp"

namespace lmdet {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct EvalReport {
  double mre_mm = 0.0;
  std::map<double, double> sdr;  // threshold mm -> percent, strict <
  struct PerLandmark {
    int count = 0;
    double mre_mm = 0.0;
  };
  std::vector<PerLandmark> per_landmark;
  size_t n_errors = 0;
  // provenance
  std::string decoder = "dark";
  bool flip_test = false;
  int eval_scale = 0;
};

// Pure metric arithmetic from per-landmark radial errors (mm, visible
// landmarks only). Error lists are sorted before reduction, which makes the
// result independent of dataset sample order down to the last bit.
inline EvalReport compute_metrics(std::vector<std::vector<double>> per_landmark_mm,
                                  const std::vector<double>& extra_thresholds = {}) {
  EvalReport rep;
  std::vector<double> all;
  rep.per_landmark.resize(per_landmark_mm.size());
  for (size_t j = 0; j < per_landmark_mm.size(); ++j) {
    auto& v = per_landmark_mm[j];
    std::sort(v.begin(), v.end());
    rep.per_landmark[j].count = static_cast<int>(v.size());
    rep.per_landmark[j].mre_mm =
        v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    all.insert(all.end(), v.begin(), v.end());
  }
  std::sort(all.begin(), all.end());
  rep.n_errors = all.size();
  rep.mre_mm = all.empty() ? 0.0 : std::accumulate(all.begin(), all.end(), 0.0) / all.size();

  std::vector<double> thresholds = {2.0, 2.5, 3.0, 4.0};
  thresholds.insert(thresholds.end(), extra_thresholds.begin(), extra_thresholds.end());
  for (double t : thresholds) {
    if (all.empty()) {
      rep.sdr[t] = 0.0;
      continue;
    }
    const auto it = std::lower_bound(all.begin(), all.end(), t);  // strict <
    rep.sdr[t] = 100.0 * static_cast<double>(it - all.begin()) / all.size();
  }
  return rep;
}

inline std::vector<CsvRow> eval_report_rows(const EvalReport& rep) {
  std::vector<CsvRow> rows;
  rows.push_back({"summary", "", "mre_mm", fmt_double(rep.mre_mm)});
  for (const auto& [t, v] : rep.sdr)
    rows.push_back({"summary", "", "sdr" + fmt_double(t), fmt_double(v)});
  rows.push_back({"summary", "", "n_errors", std::to_string(rep.n_errors)});
  for (size_t j = 0; j < rep.per_landmark.size(); ++j) {
    rows.push_back({"landmark", std::to_string(j), "count",
                    std::to_string(rep.per_landmark[j].count)});
    rows.push_back({"landmark", std::to_string(j), "mre_mm",
                    fmt_double(rep.per_landmark[j].mre_mm)});
  }
  rows.push_back({"meta", "", "decoder", rep.decoder});
  rows.push_back({"meta", "", "flip_test", rep.flip_test ? "true" : "false"});
  rows.push_back({"meta", "", "eval_scale", std::to_string(rep.eval_scale)});
  return rows;
}

inline void write_eval_report(const EvalReport& rep, const std::string& path,
                              const std::vector<CsvRow>& extra_meta = {}) {
  auto rows = eval_report_rows(rep);
  rows.insert(rows.end(), extra_meta.begin(), extra_meta.end());
  write_csv(path, {"scope", "id", "metric", "value"}, rows);
}

// ---------------------------------------------------------------------------
// Prediction plumbing
// ---------------------------------------------------------------------------

struct PredictOptions {
  DecodeMethod method = DecodeMethod::dark;
  bool dark_modulate = false;
  bool flip_test = false;
  int eval_scale = 2;
  GaussianSpec spec;
  std::vector<int> flip_swap;  // keypoint permutation; empty = identity
};

inline PredictOptions predict_options(const RunConfig& rc) {
  PredictOptions o;
  o.method = rc.decode.method;
  o.dark_modulate = rc.decode.dark_modulate;
  o.flip_test = rc.decode.flip_test;
  o.eval_scale = rc.effective_eval_scale();
  o.spec.sigma = rc.encode.sigma;
  o.spec.truncate_sigmas = rc.encode.truncate_sigmas;
  return o;
}

// Heatmaps for one input, flip-test averaged when requested.
inline HeatmapStack predict_stack(SrModel& model, const Tensor4& input,
                                  const PredictOptions& opts) {
  auto stacks = model.forward(input);
  const auto it = stacks.find(opts.eval_scale);
  if (it == stacks.end())
    fail(ErrorClass::config, "eval scale " + std::to_string(opts.eval_scale) +
                                 " is not among the model's supervised scales");
  HeatmapStack direct = std::move(it->second);
  if (!opts.flip_test) return direct;
  const Tensor4 flipped = flip_horizontal(input);
  auto stacks_f = model.forward(flipped);
  const HeatmapStack& mirrored = stacks_f.at(opts.eval_scale);
  return flip_average(direct, mirrored, opts.flip_swap.empty() ? nullptr : &opts.flip_swap);
}

inline LandmarkSet decode_stack(const HeatmapStack& hm, const PredictOptions& opts) {
  switch (opts.method) {
    case DecodeMethod::argmax: return decode_argmax(hm);
    case DecodeMethod::shifted: return decode_shifted(hm);
    case DecodeMethod::dark: return decode_dark(hm, opts.spec, opts.dark_modulate);
  }
  fail(ErrorClass::config, "bad decode method");
}

// Input-frame landmarks for one original-frame image.
inline LandmarkSet predict_landmarks(SrModel& model, const Tensor4& input,
                                     const PredictOptions& opts) {
  return decode_stack(predict_stack(model, input, opts), opts);
}

inline Tensor4 resize_to_input(const Tensor4& img, int input_h, int input_w) {
  if (img.h() == input_h && img.w() == input_w) return img;
  const AffineMap map = make_resize_map(img.w(), img.h(), input_w, input_h);
  return warp_image(img, map, input_h, input_w);
}

// ---------------------------------------------------------------------------
// Evaluation over a dataset: decode in the input frame, map back to the
// original frame, convert to mm via the per-sample pixel spacing.
// ---------------------------------------------------------------------------
inline EvalReport evaluate(SrModel& model, const Dataset& ds, const PredictOptions& opts,
                           const std::vector<double>& extra_thresholds = {}) {
  if (ds.samples.empty()) fail(ErrorClass::data, "evaluate: empty dataset");
  model.set_train(false);
  std::vector<std::vector<double>> per_landmark(ds.num_landmarks);
  const int in_h = model.config().input_h, in_w = model.config().input_w;
  for (size_t idx = 0; idx < ds.samples.size(); ++idx) {
    const auto& rec = ds.samples[idx];
    if (!(rec.pixel_spacing_mm > 0.0))
      fail(ErrorClass::data, "missing pixel spacing for " + rec.image_path);
    if (static_cast<int>(rec.landmarks.size()) != ds.num_landmarks)
      fail(ErrorClass::data, "inconsistent landmark count in " + rec.image_path);
    const Tensor4 img = load_sample_image(ds, idx);
    const Tensor4 input = resize_to_input(img, in_h, in_w);
    const LandmarkSet pred_in = predict_landmarks(model, input, opts);
    const AffineMap back = make_resize_map(rec.width, rec.height, in_w, in_h).inverse();
    const LandmarkSet pred = affine_apply(back, pred_in);
    for (int j = 0; j < ds.num_landmarks; ++j) {
      if (!rec.landmarks.visible[j]) continue;  // invisible: excluded from metrics
      const double dx = pred.points[j].x - rec.landmarks.points[j].x;
      const double dy = pred.points[j].y - rec.landmarks.points[j].y;
      per_landmark[j].push_back(std::hypot(dx, dy) * rec.pixel_spacing_mm);
    }
  }
  EvalReport rep = compute_metrics(std::move(per_landmark), extra_thresholds);
  rep.decoder = decode_method_name(opts.method);
  rep.flip_test = opts.flip_test;
  rep.eval_scale = opts.eval_scale;
  return rep;
}

// ---------------------------------------------------------------------------
// Heatmap-level ensembling: elementwise mean before decoding.
// ---------------------------------------------------------------------------
inline HeatmapStack ensemble_average(const std::vector<HeatmapStack>& stacks) {
  if (stacks.empty()) fail(ErrorClass::data, "ensemble_average: no stacks");
  HeatmapStack out;
  out.maps.resize(stacks[0].maps.n(), stacks[0].maps.c(), stacks[0].maps.h(),
                  stacks[0].maps.w());
  out.stride_x = stacks[0].stride_x;
  out.stride_y = stacks[0].stride_y;
  for (const auto& s : stacks) {
    if (!s.maps.same_shape(stacks[0].maps) || s.stride_x != out.stride_x ||
        s.stride_y != out.stride_y)
      fail(ErrorClass::shape, "ensemble_average: stack layout mismatch");
    const double* p = s.maps.data();
    double* o = out.maps.data();
    for (size_t i = 0; i < out.maps.size(); ++i) o[i] += p[i];
  }
  double* o = out.maps.data();
  for (size_t i = 0; i < out.maps.size(); ++i) o[i] /= static_cast<double>(stacks.size());
  return out;
}

inline EvalReport evaluate_ensemble(std::vector<SrModel*> models, const Dataset& ds,
                                    const PredictOptions& opts,
                                    const std::vector<double>& extra_thresholds = {}) {
  if (models.empty()) fail(ErrorClass::data, "ensemble: no models");
  if (ds.samples.empty()) fail(ErrorClass::data, "ensemble: empty dataset");
  for (auto* m : models) m->set_train(false);
  const int in_h = models[0]->config().input_h, in_w = models[0]->config().input_w;
  std::vector<std::vector<double>> per_landmark(ds.num_landmarks);
  for (size_t idx = 0; idx < ds.samples.size(); ++idx) {
    const auto& rec = ds.samples[idx];
    if (!(rec.pixel_spacing_mm > 0.0))
      fail(ErrorClass::data, "missing pixel spacing for " + rec.image_path);
    const Tensor4 img = load_sample_image(ds, idx);
    const Tensor4 input = resize_to_input(img, in_h, in_w);
    std::vector<HeatmapStack> stacks;
    stacks.reserve(models.size());
    for (auto* m : models) stacks.push_back(predict_stack(*m, input, opts));
    const LandmarkSet pred_in = decode_stack(ensemble_average(stacks), opts);
    const AffineMap back = make_resize_map(rec.width, rec.height, in_w, in_h).inverse();
    const LandmarkSet pred = affine_apply(back, pred_in);
    for (int j = 0; j < ds.num_landmarks; ++j) {
      if (!rec.landmarks.visible[j]) continue;
      const double dx = pred.points[j].x - rec.landmarks.points[j].x;
      const double dy = pred.points[j].y - rec.landmarks.points[j].y;
      per_landmark[j].push_back(std::hypot(dx, dy) * rec.pixel_spacing_mm);
    }
  }
  EvalReport rep = compute_metrics(std::move(per_landmark), extra_thresholds);
  rep.decoder = decode_method_name(opts.method);
  rep.flip_test = opts.flip_test;
  rep.eval_scale = opts.eval_scale;
  return rep;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainLogRow {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_mre_mm = 0.0;
  double val_sdr2 = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
};

inline void write_train_log(const TrainLog& log, const std::string& path) {
  std::vector<CsvRow> rows;
  for (const auto& r : log.rows)
    rows.push_back({std::to_string(r.epoch), fmt_double(r.mean_loss), fmt_double(r.val_mre_mm),
                    fmt_double(r.val_sdr2), fmt_fixed(r.wall_seconds, 3)});
  write_csv(path, {"epoch", "mean_loss", "val_mre_mm", "val_sdr2", "wall_seconds"}, rows);
}

// Random flip/scale/rotation/translation about the input center; the exact
// same map is applied to the image and its landmarks. The draw count per
// sample is fixed so the random stream stays aligned regardless of outcomes.
inline AffineMap draw_augment_map(SeededRng& rng, const AugmentConfig& cfg, int in_w, int in_h) {
  const double u_flip = rng.uniform01();
  const double scale = rng.uniform(cfg.scale_min, cfg.scale_max);
  const double rot = rng.uniform(-cfg.rot_deg, cfg.rot_deg) * M_PI / 180.0;
  const double max_t = cfg.translate_frac * std::max(in_w, in_h);
  const double tx = rng.uniform(-max_t, max_t);
  const double ty = rng.uniform(-max_t, max_t);
  AffineMap m = make_rot_scale_about({(in_w - 1) / 2.0, (in_h - 1) / 2.0}, rot, scale);
  m = compose(make_translation(tx, ty), m);
  if (u_flip < cfg.flip_prob) m = compose(m, make_flip_map(in_w));
  return m;
}

namespace detail {

struct PreparedBatch {
  Tensor4 input;
  std::map<int, HeatmapStack> targets;
};

inline PreparedBatch prepare_batch(const Dataset& ds, const std::vector<size_t>& idxs,
                                   const RunConfig& rc, SeededRng* aug_rng) {
  const int in_h = rc.data.input_height, in_w = rc.data.input_width;
  const int n_kp = rc.model.num_keypoints;
  const ModelConfig mc = rc.model_config();
  GaussianSpec spec{rc.encode.sigma, 1.0, rc.encode.truncate_sigmas};

  PreparedBatch out;
  out.input.resize(static_cast<int>(idxs.size()), 1, in_h, in_w);
  for (int scale : rc.model.supervised_scales) {
    const int s = mc.upscale_for(scale);
    HeatmapStack hs;
    const int hm_h = (in_h >> scale) * s;
    const int hm_w = (in_w >> scale) * s;
    hs.maps.resize(static_cast<int>(idxs.size()), n_kp, hm_h, hm_w);
    hs.stride_x = static_cast<double>(in_w - 1) / (hm_w - 1);
    hs.stride_y = static_cast<double>(in_h - 1) / (hm_h - 1);
    out.targets[scale] = std::move(hs);
  }

  for (size_t b = 0; b < idxs.size(); ++b) {
    const auto& rec = ds.samples[idxs[b]];
    const Tensor4 img = load_sample_image(ds, idxs[b]);
    AffineMap to_input = make_resize_map(rec.width, rec.height, in_w, in_h);
    if (aug_rng && rc.augment.enabled)
      to_input = compose(draw_augment_map(*aug_rng, rc.augment, in_w, in_h), to_input);

    const Tensor4 warped = warp_image(img, to_input, in_h, in_w);
    std::memcpy(out.input.plane(static_cast<int>(b), 0), warped.plane(0, 0),
                static_cast<size_t>(in_h) * in_w * sizeof(double));

    LandmarkSet lms = affine_apply(to_input, rec.landmarks);
    for (size_t j = 0; j < lms.size(); ++j) {
      const auto& p = lms.points[j];
      if (p.x < 0.0 || p.x > in_w - 1 || p.y < 0.0 || p.y > in_h - 1) lms.visible[j] = 0;
    }
    for (auto& [scale, hs] : out.targets) {
      const HeatmapStack enc = encode_gaussian(lms, spec, hs.maps.h(), hs.maps.w(),
                                               hs.stride_x, hs.stride_y);
      std::memcpy(hs.maps.plane(static_cast<int>(b), 0), enc.maps.plane(0, 0),
                  static_cast<size_t>(n_kp) * hs.maps.h() * hs.maps.w() * sizeof(double));
    }
  }
  return out;
}

}  // namespace detail

// Full training loop: shuffled minibatches, the configured augmentations,
// Adam, per-epoch validation MRE/SDR. Deterministic given (config, datasets):
// all randomness comes from streams derived from the config seed. When
// out_dir is non-empty, writes params.srkp, train_log.csv, and optional
// checkpoints there.
inline TrainLog train_model(SrModel& model, const Dataset& train_ds, const Dataset& val_ds,
                            const RunConfig& rc, const std::string& out_dir = "") {
  rc.validate();
  if (train_ds.samples.empty()) fail(ErrorClass::data, "train: empty training dataset");
  if (val_ds.samples.empty()) fail(ErrorClass::data, "train: empty validation dataset");
  if (train_ds.num_landmarks != rc.model.num_keypoints ||
      val_ds.num_landmarks != rc.model.num_keypoints)
    fail(ErrorClass::data, "train: dataset landmark count disagrees with model config");

  SeededRng root(rc.seed);
  SeededRng init_rng = root.derive(1);
  SeededRng shuffle_rng = root.derive(2);
  SeededRng aug_rng = root.derive(3);

  model.init(init_rng);
  AdamState opt(model.params(), rc.optim);

  PredictOptions val_opts = predict_options(rc);
  val_opts.flip_test = rc.train.val_flip_test;

  namespace fs = std::filesystem;
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorClass::io, "cannot create " + out_dir + ": " + ec.message());
  }

  TrainLog log;
  std::vector<size_t> order(train_ds.samples.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= rc.train.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    model.set_train(true);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    size_t seen = 0;
    for (size_t start = 0; start < order.size(); start += rc.train.batch_size) {
      const size_t stop = std::min(order.size(), start + rc.train.batch_size);
      const std::vector<size_t> idxs(order.begin() + start, order.begin() + stop);
      auto batch = detail::prepare_batch(train_ds, idxs, rc, &aug_rng);
      model.zero_grad();
      auto pred = model.forward(batch.input);
      for (const auto& [scale, hs] : pred) {
        const auto& tgt = batch.targets.at(scale);
        if (hs.stride_x != tgt.stride_x || hs.stride_y != tgt.stride_y)
          fail(ErrorClass::shape, "target/prediction stride mismatch at scale " +
                                      std::to_string(scale));
      }
      LossResult loss = loss_multiscale(pred, batch.targets, rc.loss);
      if (!std::isfinite(loss.value)) fail(ErrorClass::numeric, "non-finite training loss");
      model.backward(loss.grads);
      opt.step(model.params());
      loss_sum += loss.value * static_cast<double>(idxs.size());
      seen += idxs.size();
    }

    const EvalReport val = evaluate(model, val_ds, val_opts);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.rows.push_back({epoch, loss_sum / static_cast<double>(seen), val.mre_mm,
                        val.sdr.at(2.0), wall});
    log_info("epoch " + std::to_string(epoch) + " loss " + fmt_double(log.rows.back().mean_loss) +
             " val_mre_mm " + fmt_double(val.mre_mm));

    if (!out_dir.empty() && rc.train.checkpoint_every > 0 &&
        epoch % rc.train.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_%04d.srkp", epoch);
      model.save_params((fs::path(out_dir) / name).string());
    }
  }

  if (!out_dir.empty()) {
    model.save_params((fs::path(out_dir) / "params.srkp").string());
    write_train_log(log, (fs::path(out_dir) / "train_log.csv").string());
  }
  return log;
}

}  // namespace lmdet
