// lmdet: landmark-detection workbench CLI.
//
// Subcommands: gen-data, train, eval, infer, decode-bench, bias-report,
// ensemble-eval. Run configuration comes from --config FILE (JSON) with
// per-key command-line overrides; every command echoes its effective
// configuration into its output directory. Exit code 0 on success, otherwise
// a one-line "error:<class>: message" goes to stderr.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmdet/dataset.hpp"
#include "lmdet/report.hpp"
#include "lmdet/runconfig.hpp"
#include "lmdet/synth.hpp"
#include "lmdet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int exit_code_for(lmdet::ErrorClass c) {
  switch (c) {
    case lmdet::ErrorClass::usage: return 2;
    case lmdet::ErrorClass::config: return 3;
    case lmdet::ErrorClass::format: return 4;
    case lmdet::ErrorClass::io: return 5;
    case lmdet::ErrorClass::shape: return 6;
    case lmdet::ErrorClass::data: return 7;
    case lmdet::ErrorClass::numeric: return 8;
  }
  return 1;
}

// ---------------------------------------------------------------------------
// Config plumbing: every leaf of the RunConfig document becomes a CLI flag
// (dots map to dashes: --train-epochs sets train.epochs). Overrides are
// applied on top of --config FILE, which is applied on top of defaults.
// ---------------------------------------------------------------------------
struct ConfigCli {
  std::string config_path;
  std::map<std::string, std::string> overrides;  // dotted key -> raw text

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file (JSON)");
    const json skeleton = lmdet::runconfig_to_json(lmdet::RunConfig{});
    collect(cmd, skeleton, "");
  }

  lmdet::RunConfig resolve() const {
    json doc = json::object();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) lmdet::fail(lmdet::ErrorClass::io, "cannot open config: " + config_path);
      try {
        f >> doc;
      } catch (const json::exception& e) {
        lmdet::fail(lmdet::ErrorClass::config,
                    "invalid JSON in " + config_path + ": " + e.what());
      }
    }
    const json skeleton = lmdet::runconfig_to_json(lmdet::RunConfig{});
    for (const auto& [key, text] : overrides) {
      const json* leaf = &skeleton;
      json* slot = &doc;
      std::string rest = key;
      while (true) {
        const auto dot = rest.find('.');
        const std::string head = rest.substr(0, dot);
        if (!leaf->contains(head))
          lmdet::fail(lmdet::ErrorClass::config, "unknown config key \"" + key + "\"");
        leaf = &leaf->at(head);
        if (dot == std::string::npos) {
          (*slot)[head] = parse_leaf(*leaf, text, key);
          break;
        }
        slot = &(*slot)[head];
        rest = rest.substr(dot + 1);
      }
    }
    return lmdet::runconfig_from_json(doc);
  }

 private:
  static json parse_leaf(const json& proto, const std::string& text, const std::string& key) {
    try {
      if (proto.is_array()) {
        json arr = json::array();
        std::string item;
        std::stringstream ss(text);
        while (std::getline(ss, item, ','))
          if (!item.empty()) arr.push_back(std::stoll(item));
        return arr;
      }
      if (proto.is_boolean()) {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        lmdet::fail(lmdet::ErrorClass::usage, "boolean flag " + key + " wants true|false");
      }
      if (proto.is_number_integer()) return std::stoll(text);
      if (proto.is_number_unsigned()) return static_cast<uint64_t>(std::stoull(text));
      if (proto.is_number_float()) return std::stod(text);
      return text;
    } catch (const std::invalid_argument&) {
      lmdet::fail(lmdet::ErrorClass::usage, "cannot parse value for " + key + ": " + text);
    } catch (const std::out_of_range&) {
      lmdet::fail(lmdet::ErrorClass::usage, "value out of range for " + key + ": " + text);
    }
  }

  void collect(CLI::App* cmd, const json& node, const std::string& prefix) {
    for (const auto& [key, value] : node.items()) {
      const std::string dotted = prefix.empty() ? key : prefix + "." + key;
      if (value.is_object()) {
        collect(cmd, value, dotted);
        continue;
      }
      std::string flag = "--" + dotted;
      for (auto& ch : flag)
        if (ch == '.') ch = '-';
      cmd->add_option_function<std::string>(
          flag, [this, dotted](const std::string& v) { overrides[dotted] = v; },
          "override config key " + dotted);
    }
  }
};

std::string resolve_annotations(const std::string& path) {
  if (path.empty()) lmdet::fail(lmdet::ErrorClass::usage, "dataset path is empty");
  fs::path p(path);
  if (fs::is_directory(p)) p /= "annotations.json";
  return p.string();
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) lmdet::fail(lmdet::ErrorClass::io, "cannot create " + out + ": " + ec.message());
}

void echo_config(const lmdet::RunConfig& rc, const std::string& out_dir) {
  lmdet::save_runconfig(rc, (fs::path(out_dir) / "effective_config.json").string());
}

std::vector<double> parse_double_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ','))
    if (!item.empty()) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        lmdet::fail(lmdet::ErrorClass::usage, std::string("bad ") + what + " list: " + text);
      }
    }
  if (out.empty()) lmdet::fail(lmdet::ErrorClass::usage, std::string(what) + " list is empty");
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------
struct GenDataArgs {
  std::string out;
  lmdet::GenConfig cfg;
};

void run_gen_data(const GenDataArgs& a) {
  ensure_out_dir(a.out);
  lmdet::generate_dataset(a.out, a.cfg);
  json echo;
  echo["command"] = "gen-data";
  echo["n_images"] = a.cfg.n_images;
  echo["n_landmarks"] = a.cfg.n_landmarks;
  echo["size"] = a.cfg.size;
  echo["seed"] = a.cfg.seed;
  echo["pixel_spacing_mm"] = a.cfg.pixel_spacing_mm;
  echo["margin"] = a.cfg.margin;
  echo["noise_level"] = a.cfg.noise_level;
  echo["amplitude"] = a.cfg.amplitude;
  echo["pattern_scale"] = a.cfg.pattern_scale;
  std::ofstream f(fs::path(a.out) / "effective_config.json");
  f << echo.dump(2) << "\n";
  std::cout << "wrote " << a.cfg.n_images << " images to " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------
void run_train(const ConfigCli& cc, const std::string& out) {
  lmdet::RunConfig rc = cc.resolve();
  rc.validate();
  ensure_out_dir(out);
  echo_config(rc, out);
  const lmdet::Dataset train_ds = lmdet::load_dataset(resolve_annotations(rc.data.train_dir));
  const lmdet::Dataset val_ds = lmdet::load_dataset(resolve_annotations(rc.data.val_dir));
  lmdet::SrModel model(rc.model_config());
  const lmdet::TrainLog log = lmdet::train_model(model, train_ds, val_ds, rc, out);
  if (!log.rows.empty())
    std::cout << "final epoch loss " << lmdet::fmt_double(log.rows.back().mean_loss)
              << ", val MRE " << lmdet::fmt_double(log.rows.back().val_mre_mm) << " mm\n";
  std::cout << "params: " << (fs::path(out) / "params.srkp").string() << "\n";
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------
void run_eval(const ConfigCli& cc, const std::string& params, const std::string& dataset,
              const std::string& out) {
  lmdet::RunConfig rc = cc.resolve();
  rc.validate();
  ensure_out_dir(out);
  echo_config(rc, out);
  const std::string ann = resolve_annotations(dataset.empty() ? rc.data.val_dir : dataset);
  const lmdet::Dataset ds = lmdet::load_dataset(ann);
  lmdet::SrModel model(rc.model_config());
  model.load_params(params);
  const lmdet::EvalReport rep = lmdet::evaluate(model, ds, lmdet::predict_options(rc));
  std::vector<lmdet::CsvRow> meta = {
      {"meta", "", "dataset", ann},
      {"meta", "", "params", params},
      {"meta", "", "params_digest", lmdet::file_digest_hex(params)},
  };
  lmdet::write_eval_report(rep, (fs::path(out) / "eval_report.csv").string(), meta);
  std::cout << "MRE " << lmdet::fmt_double(rep.mre_mm) << " mm, SDR2 "
            << lmdet::fmt_double(rep.sdr.at(2.0)) << " (flip_test "
            << (rep.flip_test ? "on" : "off") << ")\n";
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------
void run_infer(const ConfigCli& cc, const std::string& params, const std::string& image,
               const std::string& dataset, const std::string& out) {
  lmdet::RunConfig rc = cc.resolve();
  rc.validate();
  ensure_out_dir(out);
  echo_config(rc, out);
  lmdet::SrModel model(rc.model_config());
  model.load_params(params);
  model.set_train(false);

  const lmdet::Tensor4 img = lmdet::read_pgm(image);
  const lmdet::Tensor4 input =
      lmdet::resize_to_input(img, rc.data.input_height, rc.data.input_width);
  const lmdet::PredictOptions opts = lmdet::predict_options(rc);
  const lmdet::LandmarkSet pred_in = lmdet::predict_landmarks(model, input, opts);
  const lmdet::AffineMap back =
      lmdet::make_resize_map(img.w(), img.h(), rc.data.input_width, rc.data.input_height)
          .inverse();
  const lmdet::LandmarkSet pred = lmdet::affine_apply(back, pred_in);

  // Ground truth overlay when the image appears in a dataset document.
  lmdet::LandmarkSet gt;
  bool have_gt = false;
  if (!dataset.empty()) {
    const lmdet::Dataset ds = lmdet::load_dataset(resolve_annotations(dataset));
    const auto want = fs::weakly_canonical(image);
    for (const auto& s : ds.samples) {
      if (fs::weakly_canonical(fs::path(ds.base_dir) / s.image_path) == want) {
        gt = s.landmarks;
        have_gt = true;
        break;
      }
    }
  }

  json doc;
  doc["schema"] = "lmpred-v1";
  doc["image"] = image;
  doc["decoder"] = lmdet::decode_method_name(opts.method);
  doc["flip_test"] = opts.flip_test;
  doc["eval_scale"] = opts.eval_scale;
  auto& lms = doc["landmarks"] = json::array();
  for (const auto& p : pred.points) lms.push_back({p.x, p.y});
  auto& vis = doc["visible"] = json::array();
  for (uint8_t v : pred.visible) vis.push_back(static_cast<bool>(v));
  auto& flg = doc["flags"] = json::array();
  for (uint8_t v : pred.flags) flg.push_back(static_cast<int>(v));
  std::ofstream f(fs::path(out) / "predictions.json");
  f << doc.dump(2) << "\n";
  if (!f) lmdet::fail(lmdet::ErrorClass::io, "short write: predictions.json");

  lmdet::write_svg_overlay((fs::path(out) / "overlay.svg").string(), img.w(), img.h(), pred,
                           have_gt ? &gt : nullptr, "lmdet predictions: " + image);
  std::cout << "predictions: " << (fs::path(out) / "predictions.json").string() << "\n";
}

// ---------------------------------------------------------------------------
// decode-bench: decoder x stride x sigma sweep over clean rendered Gaussians
// ---------------------------------------------------------------------------
struct DecodeBenchArgs {
  std::string out;
  std::string strides = "2,4,8";
  std::string sigmas = "6";
  std::string decoders = "argmax,shifted,dark";
  int samples = 4000;
  uint64_t seed = 1;
  bool dark_modulate = false;
  bool svg = false;
};

void run_decode_bench(const DecodeBenchArgs& a) {
  ensure_out_dir(a.out);
  const auto strides = parse_double_list(a.strides, "stride");
  const auto sigmas = parse_double_list(a.sigmas, "sigma");
  std::vector<std::string> decoders;
  {
    std::string item;
    std::stringstream ss(a.decoders);
    while (std::getline(ss, item, ','))
      if (!item.empty()) decoders.push_back(item);
  }
  if (a.samples < 1) lmdet::fail(lmdet::ErrorClass::usage, "samples must be positive");

  json echo;
  echo["command"] = "decode-bench";
  echo["strides"] = a.strides;
  echo["sigmas"] = a.sigmas;
  echo["decoders"] = a.decoders;
  echo["samples"] = a.samples;
  echo["seed"] = a.seed;
  echo["dark_modulate"] = a.dark_modulate;
  std::ofstream ef(fs::path(a.out) / "effective_config.json");
  ef << echo.dump(2) << "\n";

  std::vector<lmdet::CsvRow> rows;
  std::map<std::string, std::vector<double>> series_mean;  // decoder -> per-stride mean
  for (double sigma : sigmas) {
    for (double stride : strides) {
      // Heatmap sized so every sampled center keeps its full 3-sigma support
      // plus one stride of slack away from the borders.
      const int hm = std::max(32, 2 * static_cast<int>(std::ceil((3 * sigma + stride) / stride)) + 9);
      const double extent = stride * (hm - 1);  // input-frame extent; spacing == stride exactly
      const double margin = 3.0 * sigma + stride;
      lmdet::SeededRng rng(a.seed + static_cast<uint64_t>(stride * 1000 + sigma));
      lmdet::GaussianSpec spec{sigma, 1.0, 3.0};
      std::map<std::string, std::pair<double, double>> acc;  // decoder -> (sum, max)
      for (const auto& d : decoders) acc[d] = {0.0, 0.0};
      for (int i = 0; i < a.samples; ++i) {
        lmdet::LandmarkSet lms(1);
        lms.points[0] = {rng.uniform(margin, extent - margin),
                         rng.uniform(margin, extent - margin)};
        const lmdet::HeatmapStack hs =
            lmdet::encode_gaussian(lms, spec, hm, hm, stride, stride);
        for (const auto& d : decoders) {
          lmdet::LandmarkSet got;
          if (d == "argmax") got = lmdet::decode_argmax(hs);
          else if (d == "shifted") got = lmdet::decode_shifted(hs);
          else if (d == "dark") got = lmdet::decode_dark(hs, spec, a.dark_modulate);
          else lmdet::fail(lmdet::ErrorClass::usage, "unknown decoder " + d);
          const double err = std::hypot(got.points[0].x - lms.points[0].x,
                                        got.points[0].y - lms.points[0].y);
          acc[d].first += err;
          acc[d].second = std::max(acc[d].second, err);
        }
      }
      for (const auto& d : decoders) {
        const double mean = acc[d].first / a.samples;
        rows.push_back({d, lmdet::fmt_double(stride), lmdet::fmt_double(sigma),
                        std::to_string(a.samples), lmdet::fmt_double(mean),
                        lmdet::fmt_double(acc[d].second)});
        if (sigma == sigmas.front()) series_mean[d].push_back(mean);
      }
    }
  }
  lmdet::write_csv((fs::path(a.out) / "decode_bench.csv").string(),
                   {"decoder", "stride", "sigma", "samples", "mean_err_px", "max_err_px"}, rows);
  if (a.svg) {
    std::vector<std::string> groups;
    for (double s : strides) groups.push_back("stride " + lmdet::fmt_double(s));
    const char* colors[] = {"#e74c3c", "#f1c40f", "#2ecc71", "#3498db"};
    std::vector<lmdet::BarSeries> series;
    int ci = 0;
    for (const auto& d : decoders)
      series.push_back({d, colors[ci++ % 4], series_mean[d]});
    lmdet::write_svg_bars((fs::path(a.out) / "decode_bench.svg").string(),
                          "mean decode error (px), sigma=" + lmdet::fmt_double(sigmas.front()),
                          groups, series);
  }
  std::cout << "decode-bench: " << rows.size() << " rows -> "
            << (fs::path(a.out) / "decode_bench.csv").string() << "\n";
}

// ---------------------------------------------------------------------------
// bias-report: quantization bias per stride
// ---------------------------------------------------------------------------
struct BiasReportArgs {
  std::string out;
  std::string strides = "1,2,4,8";
  long samples = 1000000;
  uint64_t seed = 1;
  bool svg = false;
};

void run_bias_report(const BiasReportArgs& a) {
  ensure_out_dir(a.out);
  const auto strides = parse_double_list(a.strides, "stride");
  if (a.samples < 1) lmdet::fail(lmdet::ErrorClass::usage, "samples must be positive");
  json echo;
  echo["command"] = "bias-report";
  echo["strides"] = a.strides;
  echo["samples"] = a.samples;
  echo["seed"] = a.seed;
  std::ofstream ef(fs::path(a.out) / "effective_config.json");
  ef << echo.dump(2) << "\n";

  const double k = lmdet::quantization_bias_closed_form();
  std::vector<lmdet::CsvRow> rows;
  std::vector<double> means;
  for (double s : strides) {
    lmdet::SeededRng rng(a.seed + static_cast<uint64_t>(s));
    const double mean = lmdet::quantization_bias(s, static_cast<size_t>(a.samples), rng);
    means.push_back(mean);
    rows.push_back({lmdet::fmt_double(s), std::to_string(a.samples), lmdet::fmt_double(mean),
                    lmdet::fmt_double(mean / s), lmdet::fmt_double(k * s)});
  }
  lmdet::write_csv((fs::path(a.out) / "bias_report.csv").string(),
                   {"stride", "samples", "mean_radial_error_px", "normalized", "closed_form_px"},
                   rows);
  if (a.svg) {
    std::vector<std::string> groups;
    for (double s : strides) groups.push_back("stride " + lmdet::fmt_double(s));
    lmdet::write_svg_bars((fs::path(a.out) / "bias_report.svg").string(),
                          "mean nearest-grid distance (px)", groups,
                          {{"measured", "#3498db", means}});
  }
  std::cout << "bias-report -> " << (fs::path(a.out) / "bias_report.csv").string() << "\n";
}

// ---------------------------------------------------------------------------
// ensemble-eval
// ---------------------------------------------------------------------------
void run_ensemble_eval(const ConfigCli& cc, const std::vector<std::string>& params,
                       const std::string& dataset, const std::string& out) {
  lmdet::RunConfig rc = cc.resolve();
  rc.validate();
  if (params.empty()) lmdet::fail(lmdet::ErrorClass::usage, "ensemble-eval needs --params");
  ensure_out_dir(out);
  echo_config(rc, out);
  const std::string ann = resolve_annotations(dataset.empty() ? rc.data.val_dir : dataset);
  const lmdet::Dataset ds = lmdet::load_dataset(ann);

  std::vector<std::unique_ptr<lmdet::SrModel>> models;
  std::vector<lmdet::SrModel*> ptrs;
  for (const auto& p : params) {
    auto m = std::make_unique<lmdet::SrModel>(rc.model_config());
    m->load_params(p);
    ptrs.push_back(m.get());
    models.push_back(std::move(m));
  }
  const lmdet::EvalReport rep = lmdet::evaluate_ensemble(ptrs, ds, lmdet::predict_options(rc));
  std::vector<lmdet::CsvRow> meta = {
      {"meta", "", "dataset", ann},
      {"meta", "", "ensemble_k", std::to_string(params.size())},
  };
  for (size_t i = 0; i < params.size(); ++i) {
    meta.push_back({"meta", "", "params_" + std::to_string(i), params[i]});
    meta.push_back(
        {"meta", "", "params_digest_" + std::to_string(i), lmdet::file_digest_hex(params[i])});
  }
  lmdet::write_eval_report(rep, (fs::path(out) / "eval_report.csv").string(), meta);
  std::cout << "ensemble of " << params.size() << ": MRE " << lmdet::fmt_double(rep.mre_mm)
            << " mm, SDR2 " << lmdet::fmt_double(rep.sdr.at(2.0)) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"landmark detection workbench: super-resolution heatmap models, "
               "unbiased sub-pixel decoding, quantization-bias analysis"};
  app.require_subcommand(1);

  // gen-data
  GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic landmark dataset");
  cmd_gen->add_option("--out", gen.out, "output directory")->required();
  cmd_gen->add_option("--count", gen.cfg.n_images, "number of images");
  cmd_gen->add_option("--landmarks", gen.cfg.n_landmarks, "landmarks per image");
  cmd_gen->add_option("--size", gen.cfg.size, "image side in pixels");
  cmd_gen->add_option("--seed", gen.cfg.seed, "generator seed");
  cmd_gen->add_option("--spacing", gen.cfg.pixel_spacing_mm, "pixel spacing in mm");
  cmd_gen->add_option("--pattern-scale", gen.cfg.pattern_scale,
                      "pattern size multiplier (shrink for small images)");
  cmd_gen->add_option("--margin", gen.cfg.margin, "minimum center distance from borders");

  // train
  ConfigCli train_cc;
  std::string train_out;
  auto* cmd_train = app.add_subcommand("train", "train a model");
  train_cc.attach(cmd_train);
  cmd_train->add_option("--out", train_out, "output directory")->required();

  // eval
  ConfigCli eval_cc;
  std::string eval_params, eval_dataset, eval_out;
  auto* cmd_eval = app.add_subcommand("eval", "evaluate a trained model");
  eval_cc.attach(cmd_eval);
  cmd_eval->add_option("--params", eval_params, "parameter file")->required();
  cmd_eval->add_option("--dataset", eval_dataset, "dataset dir or annotations.json");
  cmd_eval->add_option("--out", eval_out, "output directory")->required();

  // infer
  ConfigCli infer_cc;
  std::string infer_params, infer_image, infer_dataset, infer_out;
  auto* cmd_infer = app.add_subcommand("infer", "predict landmarks for one image");
  infer_cc.attach(cmd_infer);
  cmd_infer->add_option("--params", infer_params, "parameter file")->required();
  cmd_infer->add_option("--image", infer_image, "input PGM image")->required();
  cmd_infer->add_option("--dataset", infer_dataset, "dataset holding ground truth (optional)");
  cmd_infer->add_option("--out", infer_out, "output directory")->required();

  // decode-bench
  DecodeBenchArgs bench;
  auto* cmd_bench = app.add_subcommand("decode-bench",
                                       "decoder x stride x sigma sweep on clean Gaussians");
  cmd_bench->add_option("--out", bench.out, "output directory")->required();
  cmd_bench->add_option("--strides", bench.strides, "comma list of strides");
  cmd_bench->add_option("--sigmas", bench.sigmas, "comma list of sigmas");
  cmd_bench->add_option("--decoders", bench.decoders, "comma list of decoders");
  cmd_bench->add_option("--samples", bench.samples, "samples per cell");
  cmd_bench->add_option("--seed", bench.seed, "rng seed");
  cmd_bench->add_flag("--dark-modulate", bench.dark_modulate, "enable dark modulation");
  cmd_bench->add_flag("--svg", bench.svg, "also write a bar chart");

  // bias-report
  BiasReportArgs bias;
  auto* cmd_bias = app.add_subcommand("bias-report", "quantization bias per stride");
  cmd_bias->add_option("--out", bias.out, "output directory")->required();
  cmd_bias->add_option("--strides", bias.strides, "comma list of strides");
  cmd_bias->add_option("--samples", bias.samples, "Monte Carlo samples per stride");
  cmd_bias->add_option("--seed", bias.seed, "rng seed");
  cmd_bias->add_flag("--svg", bias.svg, "also write a bar chart");

  // ensemble-eval
  ConfigCli ens_cc;
  std::vector<std::string> ens_params;
  std::string ens_dataset, ens_out;
  auto* cmd_ens = app.add_subcommand("ensemble-eval",
                                     "average heatmaps across models, decode once, evaluate");
  ens_cc.attach(cmd_ens);
  cmd_ens->add_option("--params", ens_params, "parameter files (repeatable)")->required();
  cmd_ens->add_option("--dataset", ens_dataset, "dataset dir or annotations.json");
  cmd_ens->add_option("--out", ens_out, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (cmd_gen->parsed()) run_gen_data(gen);
    else if (cmd_train->parsed()) run_train(train_cc, train_out);
    else if (cmd_eval->parsed()) run_eval(eval_cc, eval_params, eval_dataset, eval_out);
    else if (cmd_infer->parsed())
      run_infer(infer_cc, infer_params, infer_image, infer_dataset, infer_out);
    else if (cmd_bench->parsed()) run_decode_bench(bench);
    else if (cmd_bias->parsed()) run_bias_report(bias);
    else if (cmd_ens->parsed()) run_ensemble_eval(ens_cc, ens_params, ens_dataset, ens_out);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return 0;  // --help
    std::cerr << "error:usage: " << e.what() << "\n";
    return 2;
  } catch (const lmdet::Error& e) {
    std::cerr << "error:" << lmdet::error_class_name(e.cls()) << ": " << e.what() << "\n";
    return exit_code_for(e.cls());
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
