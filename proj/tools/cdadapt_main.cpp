/* Copyright 2026 The cdadapt Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// cdadapt: command-line entry point.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "cdadapt/ada_trainer.hpp"
#include "cdadapt/checkpoint.hpp"
#include "cdadapt/config.hpp"
#include "cdadapt/data_pipeline.hpp"
#include "cdadapt/inference.hpp"
#include "cdadapt/label_service.hpp"
#include "cdadapt/metrics.hpp"
#include "cdadapt/mlft_trainer.hpp"
#include "cdadapt/network.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cdadapt;

namespace {

void log_event(const std::string& event, json fields = json::object()) {
  fields["event"] = event;
  std::cout << fields.dump() << std::endl;
}

// Options shared by every subcommand that builds a RunConfig.
struct ConfigFlags {
  std::string config_path;
  std::string network;  // full | desk | toy
  std::uint64_t seed = 0;
  int epochs = 0;
  double lr = 0;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* lr_opt = nullptr;
  CLI::Option* network_opt = nullptr;

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "run configuration JSON (default: $DAMNET_CONFIG)");
    network_opt = app->add_option("--network", network, "network size preset")
                      ->check(CLI::IsMember({"full", "desk", "toy"}));
    seed_opt = app->add_option("--seed", seed, "global seed");
    epochs_opt = app->add_option("--epochs", epochs, "epochs for this stage")->check(CLI::PositiveNumber);
    lr_opt = app->add_option("--lr", lr, "learning rate for this stage")->check(CLI::PositiveNumber);
  }

  // Config file, then flags. `stage` selects which schedule --epochs/--lr hit.
  RunConfig resolve(const std::string& stage) const {
    RunConfig cfg;
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("DAMNET_CONFIG"); env != nullptr) path = env;
    }
    if (!path.empty()) cfg = load_run_config(path);
    if (network_opt->count() > 0) {
      if (network == "desk") {
        cfg.network = NetworkConfig::desk();
      } else if (network == "toy") {
        cfg.network = NetworkConfig::toy();
      } else {
        cfg.network = NetworkConfig{};
      }
    }
    if (seed_opt->count() > 0) cfg.seed = seed;
    Schedule* sched = nullptr;
    if (stage == "source") sched = &cfg.source;
    if (stage == "ada") sched = &cfg.ada;
    if (stage == "mlft") sched = &cfg.mlft;
    if (sched != nullptr) {
      if (epochs_opt->count() > 0) sched->epochs = epochs;
      if (lr_opt->count() > 0) sched->lr = lr;
    }
    return cfg;
  }
};

std::vector<ImagePair> load_dir(const std::string& root, const std::string& layout, Domain domain,
                                bool require_masks) {
  LoadReport report;
  auto pairs = load_cd_dataset(root, parse_layout(layout), &report, domain);
  if (pairs.empty()) throw std::runtime_error("no image pairs found under " + root);
  if (!report.missing_in_b.empty()) {
    log_event("dataset_warning", {{"root", root}, {"missing_in_b", report.missing_in_b}});
  }
  if (require_masks && !report.unlabeled.empty()) {
    throw std::runtime_error(root + ": " + std::to_string(report.unlabeled.size()) +
                             " pairs have no label mask (first: " + report.unlabeled.front() + ")");
  }
  return pairs;
}

// Network configuration stored inside a checkpoint.
NetworkConfig checkpoint_network(const std::string& path) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  return meta.config.at("network").get<NetworkConfig>();
}

std::map<std::string, Mask> load_mask_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::map<std::string, Mask> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") {
      out.emplace(e.path().stem().string(), read_png_mask(e.path()));
    }
  }
  if (out.empty()) throw std::runtime_error("no PNG masks under " + dir.string());
  return out;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-adaptive change detection toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "expand help for every subcommand");
  std::function<void()> action;

  // prepare ------------------------------------------------------------------
  struct {
    std::string in, out, layout = "generic";
    int tile = 256;
  } prep;
  auto* prepare = app.add_subcommand("prepare", "tile a change-detection dataset into patches");
  prepare->add_option("--in", prep.in, "dataset root")->required();
  prepare->add_option("--out", prep.out, "output root")->required();
  prepare->add_option("--layout", prep.layout, "levir | whu | generic");
  prepare->add_option("--tile", prep.tile, "patch size");
  prepare->callback([&] {
    action = [&] {
      LoadReport report;
      const auto pairs = load_cd_dataset(prep.in, parse_layout(prep.layout), &report);
      if (pairs.empty()) throw std::runtime_error("no image pairs found under " + prep.in);
      std::vector<ImagePair> tiles;
      for (const auto& p : pairs) {
        auto t = tile_pair(p, prep.tile);
        tiles.insert(tiles.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
      }
      save_cd_dataset(prep.out, tiles);
      log_event("prepared", {{"pairs", pairs.size()},
                             {"tiles", tiles.size()},
                             {"missing_in_b", report.missing_in_b},
                             {"unlabeled", report.unlabeled.size()}});
    };
  });

  // synth --------------------------------------------------------------------
  struct {
    int n = 64, size = 256;
    std::uint64_t seed = 0;
    std::string out, domain = "source", prefix = "s";
    float scale = 0, noise = -1, density = -1;
    std::vector<float> shift;
  } syn;
  auto* synth = app.add_subcommand("synth", "generate synthetic bi-temporal pairs for one domain");
  synth->add_option("--n", syn.n, "number of pairs")->check(CLI::PositiveNumber);
  synth->add_option("--seed", syn.seed, "generator seed");
  synth->add_option("--out", syn.out, "output root")->required();
  synth->add_option("--size", syn.size, "tile size");
  synth->add_option("--domain", syn.domain, "source | target preset")
      ->check(CLI::IsMember({"source", "target"}));
  synth->add_option("--prefix", syn.prefix, "sample id prefix");
  synth->add_option("--scale", syn.scale, "override resolution scale");
  synth->add_option("--color-shift", syn.shift, "override RGB shift (3 values)")->expected(3);
  synth->add_option("--noise", syn.noise, "override texture noise sigma");
  synth->add_option("--density", syn.density, "override change density");
  synth->callback([&] {
    action = [&] {
      SynthDomainParams p = syn.domain == "target" ? SynthDomainParams::target_preset(syn.size, syn.seed)
                                                   : SynthDomainParams::source_preset(syn.size, syn.seed);
      if (syn.scale > 0) p.resolution_scale = syn.scale;
      if (syn.shift.size() == 3) p.color_shift = {syn.shift[0], syn.shift[1], syn.shift[2]};
      if (syn.noise >= 0) p.texture_noise_sigma = syn.noise;
      if (syn.density >= 0) p.change_density = syn.density;
      const Domain d = syn.domain == "target" ? Domain::kTarget : Domain::kSource;
      const auto ds = synth_domain_dataset(syn.n, p, d, syn.prefix);
      write_synth_dataset(syn.out, ds);
      log_event("synthesized", {{"n", ds.pairs.size()}, {"domain", syn.domain}, {"out", syn.out}});
    };
  });

  // train-source -------------------------------------------------------------
  ConfigFlags src_flags;
  struct {
    std::string src, out, layout = "generic";
    bool resume = false;
  } ts;
  auto* train_source = app.add_subcommand("train-source", "supervised training on the labeled source domain");
  src_flags.add(train_source);
  train_source->add_option("--src", ts.src, "source dataset root")->required();
  train_source->add_option("--out", ts.out, "run directory")->required();
  train_source->add_option("--layout", ts.layout, "levir | whu | generic");
  train_source->add_flag("--resume", ts.resume, "continue from the last checkpoint in --out");
  train_source->callback([&] {
    action = [&] {
      const RunConfig cfg = src_flags.resolve("source");
      cfg.validate();
      const auto src = load_dir(ts.src, ts.layout, Domain::kSource, true);
      torch::manual_seed(cfg.seed);
      ChangeDetector model(cfg.network);
      log_event("start", {{"stage", "source"}, {"config_hash", cfg.hash()}, {"samples", src.size()}});
      const auto res = run_source_training(src, model, cfg, {ts.out, ts.resume, false, {}});
      log_event("done", {{"stage", "source"}, {"epochs", res.epochs_done},
                         {"checkpoint", (fs::path(ts.out) / "source.ckpt").string()}});
    };
  });

  // adapt --------------------------------------------------------------------
  ConfigFlags ada_flags;
  struct {
    std::string src, tgt, init, out, preset, layout = "generic";
    bool resume = false;
  } ad;
  auto* adapt = app.add_subcommand("adapt", "adversarial domain adaptation from a source checkpoint");
  ada_flags.add(adapt);
  adapt->add_option("--src", ad.src, "labeled source dataset root")->required();
  adapt->add_option("--tgt", ad.tgt, "unlabeled target dataset root")->required();
  adapt->add_option("--init", ad.init, "source-trained checkpoint")->required();
  adapt->add_option("--out", ad.out, "run directory")->required();
  adapt->add_option("--preset", ad.preset, "freeze preset")
      ->check(CLI::IsMember({"a100", "a010", "a001", "a111", "a110"}));
  adapt->add_option("--layout", ad.layout, "levir | whu | generic");
  adapt->add_flag("--resume", ad.resume, "continue from the last checkpoint in --out");
  adapt->callback([&] {
    action = [&] {
      RunConfig cfg = ada_flags.resolve("ada");
      cfg.network = checkpoint_network(ad.init);
      if (!ad.preset.empty()) cfg.freeze = FreezeConfig::preset(ad.preset);
      cfg.validate();
      const auto src = load_dir(ad.src, ad.layout, Domain::kSource, true);
      const auto tgt = load_dir(ad.tgt, ad.layout, Domain::kTarget, false);
      torch::manual_seed(cfg.seed);
      ChangeDetector model(cfg.network);
      Discriminator disc(cfg.network);
      load_checkpoint(ad.init, model);
      log_event("start", {{"stage", "ada"}, {"preset", cfg.freeze.preset_name()},
                          {"config_hash", cfg.hash()}});
      const auto res = run_ada(src, tgt, model, disc, cfg, {ad.out, ad.resume, false, {}});
      log_event("done", {{"stage", "ada"}, {"epochs", res.epochs_done}, {"steps", res.optimizer_steps},
                         {"checkpoint", (fs::path(ad.out) / "ada.ckpt").string()}});
    };
  });

  // select -------------------------------------------------------------------
  ConfigFlags sel_flags;
  struct {
    std::string tgt, ckpt, out, layout = "generic";
    int k = 0;
    double min_change = -1;
  } se;
  auto* select = app.add_subcommand("select", "rank target samples for micro-labeling");
  sel_flags.add(select);
  select->add_option("--tgt", se.tgt, "target dataset root")->required();
  select->add_option("--ckpt", se.ckpt, "adapted checkpoint (with discriminator)")->required();
  select->add_option("--out", se.out, "selection report path")->required();
  select->add_option("--k", se.k, "number of samples to select")->check(CLI::PositiveNumber);
  select->add_option("--min-change", se.min_change, "minimum predicted change fraction");
  select->add_option("--layout", se.layout, "levir | whu | generic");
  select->callback([&] {
    action = [&] {
      RunConfig cfg = sel_flags.resolve("");
      cfg.network = checkpoint_network(se.ckpt);
      const int k = se.k > 0 ? se.k : cfg.selection.k;
      const double floor = se.min_change >= 0 ? se.min_change : cfg.selection.min_change_frac;
      const auto tgt = load_dir(se.tgt, se.layout, Domain::kTarget, false);
      ChangeDetector model(cfg.network);
      Discriminator disc(cfg.network);
      load_checkpoint(se.ckpt, model, &disc);
      const auto sel = select_for_labeling(score_samples(tgt, model, disc), k, floor);
      write_selection_report(se.out, sel);
      log_event("selected", {{"k", k}, {"backfilled", sel.backfilled}, {"ids", sel.ids()}, {"report", se.out}});
    };
  });

  // serve-labels -------------------------------------------------------------
  struct {
    std::string tgt, report, store, host = "127.0.0.1", token, ckpt, layout = "generic";
    int port = 8080;
  } sv;
  auto* serve = app.add_subcommand("serve-labels", "serve the micro-labeling queue over HTTP");
  serve->add_option("--tgt", sv.tgt, "target dataset root")->required();
  serve->add_option("--report", sv.report, "selection report from `select`")->required();
  serve->add_option("--store", sv.store, "label store directory")->required();
  serve->add_option("--host", sv.host, "bind address");
  serve->add_option("--port", sv.port, "port (0 picks a free one)");
  serve->add_option("--token", sv.token, "shared token required on every request");
  serve->add_option("--ckpt", sv.ckpt, "checkpoint used for pre-annotation hints");
  serve->add_option("--layout", sv.layout, "levir | whu | generic");
  serve->callback([&] {
    action = [&] {
      const Selection sel = read_selection_report(sv.report);
      std::map<std::string, ImagePair> samples;
      for (auto& p : load_dir(sv.tgt, sv.layout, Domain::kTarget, false)) samples.emplace(p.id, std::move(p));
      LabelStore store(sv.store, std::move(samples));
      store.create_tasks(sel);

      LabelServerOptions opts;
      opts.host = sv.host;
      opts.port = sv.port;
      opts.token = sv.token;
      std::optional<ChangeDetector> model;
      std::mutex model_mu;
      if (!sv.ckpt.empty()) {
        model.emplace(checkpoint_network(sv.ckpt));
        load_checkpoint(sv.ckpt, *model);
        opts.hint = [&](const ImagePair& p) -> std::optional<Mask> {
          std::lock_guard lock(model_mu);
          return predict_masks(*model, {p}, 1).front();
        };
      }
      LabelServer server(store, opts);
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      const int port = server.start();
      log_event("serving", {{"host", sv.host}, {"port", port}, {"tasks", sel.entries.size()}});
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      const auto p = store.progress();
      log_event("stopped", {{"pending", p.pending}, {"in_progress", p.in_progress}, {"done", p.done}});
    };
  });

  // finetune -----------------------------------------------------------------
  ConfigFlags ft_flags;
  struct {
    std::string src, tgt, labels, init, out, layout = "generic";
    bool resume = false;
  } ft;
  auto* finetune = app.add_subcommand("finetune", "fine-tune with micro-labels and consistency training");
  ft_flags.add(finetune);
  finetune->add_option("--src", ft.src, "labeled source dataset root")->required();
  finetune->add_option("--tgt", ft.tgt, "target dataset root")->required();
  finetune->add_option("--labels", ft.labels, "exported micro-label dataset")->required();
  finetune->add_option("--init", ft.init, "adapted checkpoint")->required();
  finetune->add_option("--out", ft.out, "run directory")->required();
  finetune->add_option("--layout", ft.layout, "layout of --src/--tgt");
  finetune->add_flag("--resume", ft.resume, "continue from the last checkpoint in --out");
  finetune->callback([&] {
    action = [&] {
      RunConfig cfg = ft_flags.resolve("mlft");
      cfg.network = checkpoint_network(ft.init);
      cfg.validate();
      const auto src = load_dir(ft.src, ft.layout, Domain::kSource, true);
      auto tgt = load_dir(ft.tgt, ft.layout, Domain::kTarget, false);
      const auto labels = load_dir(ft.labels, "generic", Domain::kTarget, true);
      ChangeDetector model(cfg.network);
      load_checkpoint(ft.init, model);
      log_event("start", {{"stage", "mlft"}, {"micro_labels", labels.size()}, {"config_hash", cfg.hash()}});
      const auto res = run_mlft(tgt, src, labels, model, cfg, {ft.out, ft.resume, false, {}});
      log_event("done", {{"stage", "mlft"}, {"epochs", res.epochs_done},
                         {"zero_confidence_batches", res.zero_confidence_batches},
                         {"checkpoint", (fs::path(ft.out) / "mlft.ckpt").string()}});
    };
  });

  // eval ---------------------------------------------------------------------
  struct {
    std::string pred, gt, ckpt, data, out, before, layout = "generic";
    double baseline = -1;
    bool overlays = false;
  } ev;
  auto* eval = app.add_subcommand("eval", "metrics, per-sample analysis and error overlays");
  eval->add_option("--pred", ev.pred, "directory of predicted masks");
  eval->add_option("--gt", ev.gt, "directory of ground-truth masks");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint to run on --data");
  eval->add_option("--data", ev.data, "labeled dataset root");
  eval->add_option("--before", ev.before, "directory of masks from an earlier model");
  eval->add_option("--baseline-f1", ev.baseline, "F1 threshold for the per-sample comparison");
  eval->add_option("--out", ev.out, "report directory");
  eval->add_option("--layout", ev.layout, "layout of --data");
  eval->add_flag("--overlays", ev.overlays, "write FP/FN overlays");
  eval->callback([&] {
    const bool files = !ev.pred.empty() || !ev.gt.empty();
    const bool model = !ev.ckpt.empty() || !ev.data.empty();
    if (files == model || (files && (ev.pred.empty() || ev.gt.empty())) ||
        (model && (ev.ckpt.empty() || ev.data.empty()))) {
      throw CLI::ValidationError("eval", "give either --pred and --gt, or --ckpt and --data");
    }
    action = [&, files] {
      std::vector<std::string> ids;
      std::vector<Mask> preds;
      std::vector<Mask> gts;
      if (files) {
        const auto p = load_mask_dir(ev.pred);
        const auto g = load_mask_dir(ev.gt);
        for (const auto& [id, m] : g) {
          auto it = p.find(id);
          if (it == p.end()) throw std::runtime_error("no prediction for '" + id + "'");
          ids.push_back(id);
          gts.push_back(m);
          preds.push_back(it->second);
        }
      } else {
        const auto data = load_dir(ev.data, ev.layout, Domain::kTarget, true);
        ChangeDetector net(checkpoint_network(ev.ckpt));
        load_checkpoint(ev.ckpt, net);
        auto res = evaluate_model(net, data);
        preds = std::move(res.predictions);
        for (const auto& d : data) {
          ids.push_back(d.id);
          gts.push_back(*d.mask);
        }
      }
      const MetricReport report = evaluate_masks(preds, gts);
      std::optional<std::vector<Mask>> before;
      if (!ev.before.empty()) {
        const auto b = load_mask_dir(ev.before);
        before.emplace();
        for (const auto& id : ids) {
          auto it = b.find(id);
          if (it == b.end()) throw std::runtime_error("--before lacks '" + id + "'");
          before->push_back(it->second);
        }
      }
      const double baseline = ev.baseline >= 0 ? ev.baseline : report.f1;
      const auto ps = per_sample_analysis(preds, gts, baseline, before ? &*before : nullptr);
      json per = json::array();
      for (std::size_t i = 0; i < ids.size(); ++i) per.push_back({{"sample_id", ids[i]}, {"f1", ps.f1[i]}});
      json out{{"metrics", to_json(report)},
               {"baseline_f1", baseline},
               {"frac_above_baseline", ps.frac_above_baseline},
               {"per_sample", per}};
      if (ps.frac_improved) out["frac_improved"] = *ps.frac_improved;
      if (ps.frac_improved_over_005) out["frac_improved_over_005"] = *ps.frac_improved_over_005;
      if (ps.improvement_histogram) {
        out["improvement_histogram"] = {{"edges", ps.improvement_histogram->edges},
                                        {"counts", ps.improvement_histogram->counts}};
      }
      if (!ev.out.empty()) {
        fs::create_directories(ev.out);
        std::ofstream(fs::path(ev.out) / "report.json") << out.dump(2) << '\n';
        if (!files) {
          for (std::size_t i = 0; i < ids.size(); ++i) {
            write_png_mask(fs::path(ev.out) / "pred" / (ids[i] + ".png"), preds[i]);
          }
        }
        if (ev.overlays) {
          for (std::size_t i = 0; i < ids.size(); ++i) {
            write_png_image(fs::path(ev.out) / "overlays" / (ids[i] + ".png"),
                            render_error_overlay(preds[i], gts[i]));
          }
        }
      }
      log_event("evaluated", {{"metrics", to_json(report)}, {"n", ids.size()}});
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    action();
  } catch (const std::exception& e) {
    log_event("error", {{"message", e.what()}});
    return 1;
  }
  return 0;
}
