// Command-line front end: offline fitting, schedule training, accuracy
// evaluation, and the rendering/attribution artifacts, all driven by the
// flat key=value config format. Exit codes: 0 success, 1 validation
// failure, 2 I/O failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splat/checkpoint.hpp"
#include "splat/common.hpp"
#include "splat/config.hpp"
#include "splat/dataset.hpp"
#include "splat/gaussian.hpp"
#include "splat/image.hpp"
#include "splat/interpret.hpp"
#include "splat/losses.hpp"
#include "splat/models.hpp"
#include "splat/rasterizer.hpp"
#include "splat/training.hpp"

namespace fs = std::filesystem;
using namespace splat;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

// Keep only the named classes of a five-shape dataset, relabeling densely
// in the order given.
LabeledImages filter_classes(const LabeledImages& all,
                             const std::vector<std::string>& names) {
  std::vector<int> keep(all.class_names.size(), -1);
  for (size_t want = 0; want < names.size(); ++want) {
    auto it = std::find(all.class_names.begin(), all.class_names.end(), names[want]);
    if (it == all.class_names.end())
      throw ValidationError("dataset.classes names '" + names[want] +
                            "', which the shapes generator does not produce");
    keep[it - all.class_names.begin()] = static_cast<int>(want);
  }
  LabeledImages out;
  out.class_names = names;
  for (int64_t i = 0; i < all.size(); ++i)
    if (keep[all.labels[i]] >= 0) {
      out.images.push_back(all.images[i]);
      out.labels.push_back(keep[all.labels[i]]);
    }
  return out;
}

// The run's dataset: an on-disk source when dataset.root is set, otherwise
// the built-in synthetic shapes (optionally restricted to a class subset).
LabeledImages load_run_dataset(const RunConfig& cfg) {
  LabeledImages all;
  if (cfg.dataset.root.empty()) {
    all = generate_shapes_dataset(cfg.synth_per_class, cfg.model.image_size,
                                  cfg.synth_seed);
    if (!cfg.dataset.classes.empty()) all = filter_classes(all, cfg.dataset.classes);
  } else {
    if (cfg.dataset.image_size != cfg.model.image_size)
      throw ValidationError("dataset.image_size " +
                            std::to_string(cfg.dataset.image_size) +
                            " does not match model.image_size " +
                            std::to_string(cfg.model.image_size));
    all = load_dataset(cfg.dataset);
  }
  if (all.size() == 0) throw ValidationError("the dataset is empty");
  const int64_t classes = static_cast<int64_t>(all.class_names.size());
  if (classes != cfg.model.num_classes)
    throw ValidationError("dataset has " + std::to_string(classes) +
                          " classes but model.num_classes is " +
                          std::to_string(cfg.model.num_classes));
  return all;
}

struct LoadedRun {
  RunConfig cfg;
  GaussianEncoder encoder;
  GaussianClassifier classifier;
  OptimizerState enc_state, cls_state;
  int64_t epoch = 0;
};

LoadedRun load_run(const std::string& ckpt_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  RunConfig cfg = parse_config_text(ckpt.config_text);
  Rng re(Rng::mix(cfg.train.seed, 101));
  Rng rc(Rng::mix(cfg.train.seed, 202));
  LoadedRun run{cfg, GaussianEncoder(cfg.model, re),
                GaussianClassifier(cfg.model, rc)};
  restore_net(ckpt.encoder, run.encoder.params(), run.enc_state);
  restore_net(ckpt.classifier, run.classifier.params(), run.cls_state);
  run.epoch = ckpt.epoch;
  return run;
}

Tensor load_model_image(const std::string& path, int64_t size) {
  Tensor img = read_image(path);
  if (img.dim(0) != size || img.dim(1) != size)
    img = resize_bilinear(img, size, size);
  return img;
}

double psnr(double mse_value) {
  return mse_value <= 0 ? std::numeric_limits<double>::infinity()
                        : 10.0 * std::log10(1.0 / mse_value);
}

// ------------------------------------------------------------------ fit

int cmd_fit(const std::string& image_path, int64_t k, int64_t steps,
            const std::string& out, const std::string& loss,
            const std::string& init, uint64_t seed, double lr,
            double lambda_perc) {
  Tensor image = read_image(image_path);
  std::cout << "fitting " << image_path << " (" << image.dim(0) << "x"
            << image.dim(1) << ") with k=" << k << ", " << steps << " steps\n";
  FitResult fit = fit_image_sgd(image, k, steps, loss, seed, init, lr, lambda_perc);

  save_gaussians(fit.raw, out + ".gauss");
  const RenderTarget target{static_cast<int>(image.dim(1)),
                            static_cast<int>(image.dim(0)), fit.background};
  RenderOutput rendered = render(clamp_scales_for_render(decode(fit.raw)), target);
  write_png(out + "_fit.png", hstack_images(image, rendered.image));

  const double err = mse(rendered.image, image).item();
  std::cout << "loss " << fit.trace.front() << " -> " << fit.trace.back()
            << "\nfinal mse " << err << " (psnr " << psnr(err) << " dB)\n"
            << "wrote " << out << ".gauss and " << out << "_fit.png\n";
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const std::string& config_path, const std::string& out,
              const std::string& resume, bool swap_classifier,
              int64_t save_every, int64_t stop_after) {
  RunConfig cfg = load_config_file(config_path);
  LabeledImages all = load_run_dataset(cfg);
  auto [train, val] = split_train_val(all, cfg.val_fraction, cfg.train.seed);
  ensure_dir(out);

  Rng re(Rng::mix(cfg.train.seed, 101));
  Rng rc(Rng::mix(cfg.train.seed, 202));
  GaussianEncoder encoder(cfg.model, re);
  GaussianClassifier classifier(cfg.model, rc);
  OptimizerState enc_state, cls_state;
  int64_t start_epoch = 0;

  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    restore_net(ckpt.encoder, encoder.params(), enc_state);
    if (swap_classifier) {
      // keep the encoder, restart the classifier and its optimizer
      Rng rswap(Rng::mix(cfg.train.seed, 303));
      classifier = GaussianClassifier(cfg.model, rswap);
      cls_state = OptimizerState{};
    } else {
      restore_net(ckpt.classifier, classifier.params(), cls_state);
    }
    start_epoch = ckpt.epoch;
    std::cout << "resumed from " << resume << " at epoch " << start_epoch
              << (swap_classifier ? " with a fresh classifier" : "") << "\n";
  } else if (swap_classifier) {
    throw ValidationError("--swap-classifier requires --resume");
  }

  const std::string metrics_path = out + "/metrics.csv";
  std::ofstream metrics(metrics_path,
                        start_epoch > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot write " + metrics_path);
  if (start_epoch == 0) metrics << metrics_csv_header() << "\n";

  const std::string ckpt_path = out + "/model.ckpt";
  auto save_run = [&](int64_t completed) {
    Checkpoint ckpt;
    ckpt.epoch = completed;
    ckpt.config_text = config_to_text(cfg);
    Rng snap(Rng::mix(cfg.train.seed, static_cast<uint64_t>(completed)));
    ckpt.rng = snap.state();
    ckpt.encoder = snapshot_net(encoder.params(), enc_state);
    ckpt.classifier = snapshot_net(classifier.params(), cls_state);
    save_checkpoint(ckpt, ckpt_path);
  };

  const int64_t total = cfg.train.total_epochs();
  const int64_t end_epoch =
      stop_after > 0 ? std::min(stop_after, total) : total;
  std::vector<MetricsRow> rows = run_schedule(
      train, val, encoder, classifier, enc_state, cls_state, cfg.train,
      start_epoch, end_epoch, [&](const MetricsRow& row) {
        metrics << metrics_csv_row(row) << "\n";
        metrics.flush();
        std::cout << metrics_csv_row(row) << "\n";
        if (save_every > 0 && (row.epoch + 1) % save_every == 0)
          save_run(row.epoch + 1);
      });

  save_run(end_epoch);
  if (!rows.empty())
    std::cout << "final train_acc=" << rows.back().train_acc
              << " val_acc=" << rows.back().val_acc << "\n";
  std::cout << "wrote " << ckpt_path << " and " << metrics_path << "\n";
  return 0;
}

// ----------------------------------------------------------------- eval

int cmd_eval(const std::string& ckpt_path, const std::string& data_root,
             const std::string& data_format, const std::string& on,
             const std::string& split, int64_t per_class, uint64_t data_seed) {
  if (on != "gaussians" && on != "rendered")
    throw ValidationError("--on must be gaussians or rendered, got '" + on + "'");
  if (split != "train" && split != "val" && split != "all")
    throw ValidationError("--split must be train, val, or all, got '" + split + "'");

  LoadedRun run = load_run(ckpt_path);
  RunConfig cfg = run.cfg;
  if (!data_root.empty()) {
    cfg.dataset.root = data_root;
    cfg.dataset.format = data_format;
    cfg.dataset.image_size = cfg.model.image_size;
  } else if (cfg.dataset.root.empty()) {
    // rebuild the synthetic source the run trained on, unless overridden
    if (per_class > 0) cfg.synth_per_class = per_class;
    if (data_seed != 0) cfg.synth_seed = data_seed;
  }
  LabeledImages all = load_run_dataset(cfg);

  LabeledImages subset;
  const LabeledImages* data = &all;
  if (split != "all") {
    auto [train, val] = split_train_val(all, cfg.val_fraction, cfg.train.seed);
    subset = split == "train" ? std::move(train) : std::move(val);
    data = &subset;
  }
  if (data->size() == 0) throw ValidationError("the evaluation split is empty");

  const double acc = evaluate_accuracy(*data, run.encoder, run.classifier,
                                       cfg.train.seed, cfg.train.batch_size, on,
                                       cfg.train.g0_scale);
  std::cout << "top-1 accuracy: " << acc << " (on=" << on << ", split=" << split
            << ", images=" << data->size() << ", epoch=" << run.epoch << ")\n";
  return 0;
}

// ------------------------------------------------------- render / explain

int cmd_render(const std::string& ckpt_path, const std::string& image_path,
               const std::string& out, int64_t upscale, uint64_t seed,
               int class_id, bool saliency_only, bool on_raw) {
  LoadedRun run = load_run(ckpt_path);
  const ModelConfig& mc = run.cfg.model;
  Tensor image = load_model_image(image_path, mc.image_size);

  Rng g0_rng(Rng::mix(seed, 0xE0));
  Tensor g0 = Tensor::randn({1, mc.k, 9}, g0_rng, run.cfg.train.g0_scale);
  Tensor batch_image = Tensor::from_data({1, mc.image_size, mc.image_size, 3},
                                         image.data());
  Tensor raw_batched = run.encoder.encode(batch_image, g0).raw_gaussians;
  Tensor raw = Tensor::from_data({mc.k, 9}, raw_batched.data());

  Tensor logits = run.classifier.classify(raw_batched);
  int predicted = 0;
  for (int c = 1; c < mc.num_classes; ++c)
    if (logits.data()[c] > logits.data()[predicted]) predicted = c;
  const int target_class = class_id >= 0 ? class_id : predicted;
  std::cout << "predicted class " << predicted;
  if (!run.cfg.dataset.classes.empty() &&
      predicted < static_cast<int>(run.cfg.dataset.classes.size()))
    std::cout << " (" << run.cfg.dataset.classes[predicted] << ")";
  std::cout << "; attributing class " << target_class << "\n";

  DecodedGaussianBatch decoded = decode(raw);

  if (!saliency_only) {
    const RenderTarget target{static_cast<int>(mc.image_size),
                              static_cast<int>(mc.image_size),
                              {0, 0, 0}};
    RenderOutput rendered = render(decoded, target);
    write_png(out + "_recon.png", rendered.image);

    Tensor overlay = Tensor::from_data(image.shape(), image.data());
    std::vector<int64_t> touched = overlay_ellipses(overlay, decoded);
    write_png(out + "_overlay.png", overlay);
    int64_t visible = 0;
    for (int64_t t : touched) visible += t > 0 ? 1 : 0;
    std::cout << visible << "/" << mc.k << " ellipses visible in the overlay\n";
  }

  DetMapResult det = det_sigma_map(decoded);
  export_heatmap(det.map, out + "_det.png", upscale);

  std::vector<double> scores;
  SaliencyMap attribution = cdam(raw, run.classifier, target_class, on_raw, &scores);
  export_heatmap(attribution, out + "_cdam.png", upscale);

  if (saliency_only) saliency_csv(decoded, det.dets, scores, out + "_saliency.csv");

  std::cout << "wrote " << out << "_*.png\n";
  return 0;
}

// ------------------------------------------------------------ dataset-gen

int cmd_dataset_gen(const std::string& out, int64_t per_class, int64_t size,
                    uint64_t seed) {
  ensure_dir(out);
  LabeledImages data = generate_shapes_dataset(per_class, size, seed);
  save_dataset_pngs(data, out);
  std::cout << "wrote " << data.size() << " images across "
            << data.class_names.size() << " classes to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D gaussian-splat image codec with a splat-native classifier"};
  app.require_subcommand(1);
  app.footer("Config keys (flat key=value, '#' comments):\n  " + [] {
    std::string s;
    for (const auto& k : config_keys()) s += k + " ";
    return s;
  }());

  // fit
  std::string fit_image, fit_out = "fit", fit_loss = "bce+dssim", fit_init = "kmeans";
  int64_t fit_k = 64, fit_steps = 2000;
  uint64_t fit_seed = 1;
  double fit_lr = 0.05, fit_lperc = 0.1;
  auto* fit = app.add_subcommand("fit", "Fit one image offline with k gaussians");
  fit->add_option("image", fit_image, "input image (.png or .ppm)")->required();
  fit->add_option("--k", fit_k, "number of gaussians");
  fit->add_option("--steps", fit_steps, "optimization steps");
  fit->add_option("--out", fit_out, "output prefix");
  fit->add_option("--loss", fit_loss, "mse | bce | mse+dssim | bce+dssim");
  fit->add_option("--init", fit_init, "kmeans | random");
  fit->add_option("--seed", fit_seed, "rng seed");
  fit->add_option("--lr", fit_lr, "base learning rate");
  fit->add_option("--lambda-perc", fit_lperc, "structural loss weight");

  // train
  std::string train_config, train_out = "run", train_resume;
  bool train_swap = false;
  int64_t train_save_every = 0, train_stop_after = -1;
  auto* train = app.add_subcommand("train", "Run the training schedule from a config");
  train->add_option("config", train_config, "config file (key=value)")->required();
  train->add_option("--out", train_out, "output directory");
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  train->add_flag("--swap-classifier", train_swap,
                  "on resume: keep the encoder, reinitialize the classifier");
  train->add_option("--save-every", train_save_every,
                    "also checkpoint every N epochs (0 = only at the end)");
  train->add_option("--stop-after", train_stop_after,
                    "pause the schedule after this epoch (resume later)");

  // eval
  std::string eval_ckpt, eval_data, eval_format = "image-dir";
  std::string eval_on = "gaussians", eval_split = "val";
  int64_t eval_per_class = 0;
  uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Report top-1 accuracy for a checkpoint");
  eval->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data,
                   "dataset root (default: the run's own dataset)");
  eval->add_option("--data-format", eval_format, "image-dir | mnist-idx | cifar-bin");
  eval->add_option("--on", eval_on,
                   "gaussians: classify encoder outputs; rendered: rasterize, "
                   "re-encode, classify");
  eval->add_option("--split", eval_split, "train | val | all");
  eval->add_option("--per-class", eval_per_class,
                   "synthetic images per class (default: from the checkpoint)");
  eval->add_option("--data-seed", eval_seed,
                   "synthetic dataset seed (default: from the checkpoint)");

  // render
  std::string ren_ckpt, ren_image, ren_out = "render";
  int64_t ren_upscale = 8;
  uint64_t ren_seed = 1;
  int ren_class = -1;
  auto* ren = app.add_subcommand(
      "render", "Encode an image and write reconstruction + attribution maps");
  ren->add_option("checkpoint", ren_ckpt, "checkpoint file")->required();
  ren->add_option("image", ren_image, "input image")->required();
  ren->add_option("--out", ren_out, "output prefix");
  ren->add_option("--upscale", ren_upscale, "heatmap pixels per grid cell");
  ren->add_option("--seed", ren_seed, "gaussian-token seed");
  ren->add_option("--class", ren_class, "attribution class (-1 = predicted)");

  // explain
  std::string exp_ckpt, exp_image, exp_out = "explain";
  int64_t exp_upscale = 8;
  uint64_t exp_seed = 1;
  int exp_class = -1;
  bool exp_raw = false;
  auto* exp = app.add_subcommand(
      "explain", "Saliency outputs only: det map, attribution map, CSV");
  exp->add_option("checkpoint", exp_ckpt, "checkpoint file")->required();
  exp->add_option("image", exp_image, "input image")->required();
  exp->add_option("--out", exp_out, "output prefix");
  exp->add_option("--upscale", exp_upscale, "heatmap pixels per grid cell");
  exp->add_option("--seed", exp_seed, "gaussian-token seed");
  exp->add_option("--class", exp_class, "attribution class (-1 = predicted)");
  exp->add_flag("--on-raw", exp_raw,
                "attribute on the raw 9-parameter inputs instead of the "
                "final-block activations");

  // dataset-gen
  std::string gen_out = "shapes";
  int64_t gen_per_class = 100, gen_size = 32;
  uint64_t gen_seed = 1;
  auto* gen = app.add_subcommand("dataset-gen",
                                 "Write the synthetic shapes dataset as PNGs");
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--per-class", gen_per_class, "images per class");
  gen->add_option("--size", gen_size, "square image size");
  gen->add_option("--seed", gen_seed, "generator seed");

  int rc = 0;
  fit->callback([&] {
    rc = cmd_fit(fit_image, fit_k, fit_steps, fit_out, fit_loss, fit_init,
                 fit_seed, fit_lr, fit_lperc);
  });
  train->callback([&] {
    rc = cmd_train(train_config, train_out, train_resume, train_swap,
                   train_save_every, train_stop_after);
  });
  eval->callback([&] {
    rc = cmd_eval(eval_ckpt, eval_data, eval_format, eval_on, eval_split,
                  eval_per_class, eval_seed);
  });
  ren->callback([&] {
    rc = cmd_render(ren_ckpt, ren_image, ren_out, ren_upscale, ren_seed,
                    ren_class, false, false);
  });
  exp->callback([&] {
    rc = cmd_render(exp_ckpt, exp_image, exp_out, exp_upscale, exp_seed,
                    exp_class, true, exp_raw);
  });
  gen->callback([&] { rc = cmd_dataset_gen(gen_out, gen_per_class, gen_size, gen_seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
