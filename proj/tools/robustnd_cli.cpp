// Copyright 2026 The robustnd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// robustnd command line: extract, score, attack, eval, gmm-fit, check.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "robustnd.hpp"
#include "robustnd/testing/acceptance.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace robustnd;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitFormat = 3;
constexpr int kExitNumeric = 4;

struct BackboneArgs {
  std::string manifest, weights;

  void add_to(CLI::App* app) {
    app->add_option("--manifest", manifest, "backbone manifest (JSON)")->required();
    app->add_option("--weights", weights, "weight blob (ZWB)");
  }
  Backbone<float> load() const { return load_backbone({manifest, weights}); }
};

struct ScorerArgs {
  std::string bank, gmm;
  std::optional<std::size_t> k;

  void add_to(CLI::App* app) {
    app->add_option("--bank", bank, "feature bank (ZTB, with optional .json sidecar)");
    app->add_option("--gmm", gmm, "GMM model from gmm-fit; replaces k-NN");
    app->add_option("--k", k, "neighbours for k-NN (default: bank sidecar, else 2)");
  }

  detail::AnyScorer<float> build(const Backbone<float>& graph) const {
    if (!gmm.empty()) {
      const auto j = json::parse(io::read_text(gmm));
      const std::string hash = j.value("backbone_hash", "");
      if (!hash.empty() && hash != graph.hash()) {
        throw ValidationError("gmm model was fit on features of backbone " + hash + ", loaded " + graph.hash());
      }
      return detail::AnyScorer<float>(GmmScorer<float>(gmm_from_json(j), graph.hash()));
    }
    if (bank.empty()) throw ValidationError("need --bank or --gmm");
    auto loaded = formats::load_bank(bank);
    const auto& src = loaded.bank->source().backbone_hash;
    if (!src.empty() && src != graph.hash()) {
      throw ValidationError("bank was extracted with backbone " + src + ", loaded " + graph.hash());
    }
    if (src.empty()) {
      // Unbound bank: bind it to the backbone at hand.
      loaded.bank = std::make_shared<const FeatureBank<float>>(loaded.bank->features(),
                                                               BankSource{graph.hash(), loaded.bank->source().dataset_tag});
    }
    return detail::AnyScorer<float>(KnnScorer<float>(loaded.bank, k.value_or(loaded.meta.k)));
  }
};

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    io::write_text(path, text);
  }
}

/// Rows of `images` whose label equals `cls` (all rows when unset), then capped.
std::vector<std::size_t> select_rows(std::size_t n, const std::vector<int>& labels, std::optional<int> cls,
                                     std::optional<std::size_t> cap, std::uint64_t seed) {
  std::vector<std::size_t> rows;
  if (cls && labels.size() != n) throw ValidationError("--class needs one label per image");
  for (std::size_t i = 0; i < n; ++i) {
    if (!cls || labels[i] == *cls) rows.push_back(i);
  }
  if (rows.empty()) throw ValidationError("no images selected");
  const auto pick = detail::capped_indices(rows.size(), cap, seed);
  std::vector<std::size_t> out;
  for (const auto p : pick) out.push_back(rows[p]);
  return out;
}

/// Attack roles from labels: 0/1 as given, or 0 for `normal_class` and 1 otherwise.
std::vector<int> roles_from(const std::vector<int>& labels, std::optional<int> normal_class) {
  std::vector<int> roles(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    roles[i] = normal_class ? (labels[i] == *normal_class ? 0 : 1) : labels[i];
    if (roles[i] != 0 && roles[i] != 1) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " is not 0/1; pass --normal-class");
    }
  }
  return roles;
}

struct AttackOverrides {
  std::optional<double> epsilon, alpha;
  std::optional<int> steps, restarts;
  std::optional<std::uint64_t> seed;
  bool last_iterate = false;

  void add_to(CLI::App* app, bool seed_required) {
    app->add_option("--epsilon", epsilon, "L-inf budget");
    app->add_option("--steps", steps, "PGD steps");
    app->add_option("--alpha", alpha, "step size (default 2.5 * epsilon / steps)");
    app->add_option("--restarts", restarts, "random restarts");
    auto* s = app->add_option("--seed", seed, "RNG seed");
    if (seed_required) s->required();
    app->add_flag("--last-iterate", last_iterate, "return the final iterate instead of the best one");
  }

  // Applied to the JSON form so the echoed config shows the effective values.
  void apply(json& a) const {
    if (epsilon) a["epsilon"] = *epsilon;
    if (alpha) a["alpha"] = *alpha;
    if (steps) a["steps"] = *steps;
    if (restarts) a["restarts"] = *restarts;
    if (seed) a["seed"] = *seed;
    if (last_iterate) a["iterate_selection"] = "last";
  }
  bool any_attack_field() const { return epsilon || alpha || steps || restarts || last_iterate; }
};

ordered_json outcome_json(const AttackOutcome<float>& o, std::size_t index, int role) {
  ordered_json j;
  j["index"] = index;
  j["role"] = role;
  j["initial_score"] = o.initial_score;
  j["final_score"] = o.final_score;
  j["linf"] = o.linf;
  j["restart"] = o.restart;
  j["step"] = o.step;
  if (!o.trajectory.empty()) j["trajectory"] = o.trajectory;
  return j;
}

void progress(const std::string& msg) { std::cerr << "[robustnd] " << msg << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robustnd: k-NN / GMM novelty detection and PGD robustness evaluation"};
  app.set_version_flag("--version", std::string(kEngineVersion));
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (0: config value or 1)")->check(CLI::NonNegativeNumber);

  // extract
  auto* extract = app.add_subcommand("extract", "images -> feature bank (ZTB + sidecar)");
  BackboneArgs ex_bb;
  ex_bb.add_to(extract);
  std::string ex_images, ex_labels, ex_out, ex_tag;
  std::optional<int> ex_class;
  std::optional<std::size_t> ex_cap;
  std::uint64_t ex_seed = 0;
  std::size_t ex_k = 2, ex_m = 5;
  extract->add_option("--images", ex_images, "IDX or ZTB images")->required();
  extract->add_option("--labels", ex_labels, "IDX labels");
  extract->add_option("--class", ex_class, "keep only this label (needs --labels)");
  extract->add_option("--cap", ex_cap, "random subset of at most this many rows");
  extract->add_option("--seed", ex_seed, "seed for --cap");
  extract->add_option("--tag", ex_tag, "dataset tag stored with the bank");
  extract->add_option("--k", ex_k, "default k recorded in the sidecar");
  extract->add_option("--components", ex_m, "default GMM components recorded in the sidecar");
  extract->add_option("--out", ex_out, "output bank path")->required();

  // score
  auto* score = app.add_subcommand("score", "test images -> anomaly scores (CSV)");
  BackboneArgs sc_bb;
  sc_bb.add_to(score);
  ScorerArgs sc_scorer;
  sc_scorer.add_to(score);
  std::string sc_images, sc_out;
  score->add_option("--images", sc_images, "IDX or ZTB images")->required();
  score->add_option("--out", sc_out, "CSV output (default stdout)");

  // attack
  auto* attack = app.add_subcommand("attack", "PGD against the detector, one sample or a batch");
  BackboneArgs at_bb;
  at_bb.add_to(attack);
  ScorerArgs at_scorer;
  at_scorer.add_to(attack);
  AttackOverrides at_over;
  at_over.add_to(attack, true);
  std::string at_images, at_labels, at_config, at_out, at_adv_out;
  std::optional<int> at_label, at_normal;
  std::optional<std::size_t> at_index;
  bool at_trajectory = false;
  attack->add_option("--images", at_images, "IDX or ZTB images")->required();
  attack->add_option("--labels", at_labels, "IDX labels (0 normal, 1 outlier, or see --normal-class)");
  attack->add_option("--label", at_label, "one role for every image (0 normal, 1 outlier)");
  attack->add_option("--normal-class", at_normal, "label treated as normal; all others are outliers");
  attack->add_option("--index", at_index, "attack only this row");
  attack->add_option("--config", at_config, "attack JSON (epsilon, steps, alpha, restarts, seed, ...)");
  attack->add_flag("--trajectory", at_trajectory, "record the per-step score of the winning restart");
  attack->add_option("--out", at_out, "outcome JSON (default stdout)");
  attack->add_option("--adv-out", at_adv_out, "adversarial images (ZTB)");

  // eval
  auto* eval = app.add_subcommand("eval", "run a protocol config -> report JSON + table");
  std::string ev_config, ev_out, ev_scorer;
  AttackOverrides ev_over;
  ev_over.add_to(eval, true);
  std::optional<std::size_t> ev_k, ev_m, ev_cap_train, ev_cap_test;
  bool ev_clean = false;
  eval->add_option("--config", ev_config, "experiment config (JSON)")->required();
  eval->add_option("--out", ev_out, "report JSON path");
  eval->add_option("--scorer", ev_scorer, "knn or gmm")->check(CLI::IsMember({"knn", "gmm"}));
  eval->add_option("--k", ev_k, "k-NN neighbours");
  eval->add_option("--components", ev_m, "GMM components");
  eval->add_option("--cap-train", ev_cap_train, "bank rows per setup");
  eval->add_option("--cap-test", ev_cap_test, "test rows");
  eval->add_flag("--clean", ev_clean, "skip the attack");

  // gmm-fit
  auto* gfit = app.add_subcommand("gmm-fit", "feature bank -> GMM model (JSON)");
  std::string gf_bank, gf_out;
  std::optional<std::size_t> gf_m;
  GmmFitOptions gf_opt;
  gfit->add_option("--bank", gf_bank, "feature bank (ZTB)")->required();
  gfit->add_option("--components", gf_m, "mixture components (default: bank sidecar, else 5)");
  gfit->add_option("--seed", gf_opt.seed, "k-means++ seed");
  gfit->add_option("--max-iters", gf_opt.max_iters, "EM iteration cap");
  gfit->add_option("--tol", gf_opt.tol, "stop when the mean log-likelihood gains less than this");
  gfit->add_option("--variance-floor", gf_opt.variance_floor, "lower bound on every variance");
  gfit->add_option("--out", gf_out, "model path")->required();

  // check
  auto* check = app.add_subcommand("check", "oracle and gradient self-tests");
  bool ck_quick = false;
  std::string ck_parity, ck_manifest, ck_weights;
  check->add_flag("--quick", ck_quick, "reduced instance counts");
  check->add_option("--parity", ck_parity, "parity record from the exporter");
  check->add_option("--manifest", ck_manifest, "backbone for --parity");
  check->add_option("--weights", ck_weights, "weights for --parity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (threads > 0) parallel::set_num_threads(threads);

    if (*extract) {
      const auto graph = ex_bb.load();
      const auto images = formats::load_images(ex_images);
      std::vector<int> labels;
      if (!ex_labels.empty()) labels = formats::load_idx_labels(ex_labels);
      const auto rows = select_rows(images.dim(0), labels, ex_class, ex_cap, ex_seed);
      const auto features = detail::features_in_chunks(graph, images, rows);
      std::string tag = ex_tag.empty() ? fs::path(ex_images).stem().string() : ex_tag;
      if (ex_class) tag += ":class" + std::to_string(*ex_class);
      const FeatureBank<float> bank(features, BankSource{graph.hash(), tag});
      formats::save_bank(bank, {bank.source(), ex_k, ex_m}, ex_out);
      progress("wrote " + std::to_string(bank.n()) + " x " + std::to_string(bank.d()) + " bank to " + ex_out);
    } else if (*score) {
      const auto graph = sc_bb.load();
      const auto scorer = sc_scorer.build(graph);
      const auto images = formats::load_images(sc_images);
      std::vector<std::size_t> rows(images.dim(0));
      std::iota(rows.begin(), rows.end(), std::size_t{0});
      const auto features = detail::features_in_chunks(graph, images, rows);
      std::vector<double> s(rows.size());
      parallel::parallel_for(rows.size(), [&](std::size_t i) { s[i] = scorer.score(features.row(i)).score; });
      std::string csv = "index,score\n";
      char buf[64];
      for (std::size_t i = 0; i < s.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, s[i]);
        csv += buf;
      }
      write_or_print(sc_out, csv);
    } else if (*attack) {
      const auto graph = at_bb.load();
      const auto scorer = at_scorer.build(graph);
      json a = at_config.empty() ? json::object() : json::parse(io::read_text(at_config));
      at_over.apply(a);
      auto cfg = attack_from_json(a);
      cfg.record_trajectory = at_trajectory;
      auto images = formats::load_images(at_images);
      std::vector<int> labels;
      if (at_label) {
        labels.assign(images.dim(0), *at_label);
      } else if (!at_labels.empty()) {
        labels = formats::load_idx_labels(at_labels);
      } else {
        throw ValidationError("need --labels or --label");
      }
      if (labels.size() != images.dim(0)) throw ValidationError("labels and images differ in count");
      auto roles = roles_from(labels, at_normal);
      std::size_t first = 0;
      if (at_index) {
        if (*at_index >= images.dim(0)) throw ValidationError("--index out of range");
        first = *at_index;
        images = gather_rows(images, std::vector<std::size_t>{first});
        roles = {roles[first]};
      }
      const auto outcomes = pgd_attack_batch(graph, scorer, images, roles, cfg, first);
      ordered_json out;
      out["engine_version"] = kEngineVersion;
      out["backbone_hash"] = graph.hash();
      out["attack"] = attack_to_json(cfg);
      out["outcomes"] = json::array();
      for (std::size_t i = 0; i < outcomes.size(); ++i) out["outcomes"].push_back(outcome_json(outcomes[i], first + i, roles[i]));
      write_or_print(at_out, out.dump(2) + "\n");
      if (!at_adv_out.empty()) {
        Shape dims = images.dims();
        std::vector<float> all;
        for (const auto& o : outcomes) all.insert(all.end(), o.adversarial.values().begin(), o.adversarial.values().end());
        formats::save_ztb(Tensor<float>(dims, std::move(all)), at_adv_out);
      }
    } else if (*eval) {
      json j;
      try {
        j = json::parse(io::read_text(ev_config));
      } catch (const json::parse_error& e) {
        throw ValidationError("config '" + ev_config + "': " + e.what());
      }
      if (!j.is_object()) throw ValidationError("config: expected an object");
      j["seed"] = *ev_over.seed;
      if (ev_scorer.size()) j["scorer"]["kind"] = ev_scorer;
      if (ev_k) j["scorer"]["k"] = *ev_k;
      if (ev_m) j["scorer"]["components"] = *ev_m;
      if (ev_cap_train) j["caps"]["train"] = *ev_cap_train;
      if (ev_cap_test) j["caps"]["test"] = *ev_cap_test;
      if (threads > 0) j["threads"] = threads;
      if (ev_clean) {
        j["attack"] = nullptr;
      } else if (ev_over.any_attack_field() || j.contains("attack")) {
        // The attack seed follows --seed unless the config pins its own.
        json a = j.contains("attack") && j["attack"].is_object() ? j["attack"] : json::object();
        auto over = ev_over;
        if (a.contains("seed")) over.seed.reset();
        over.apply(a);
        j["attack"] = a;
      }
      const auto cfg = parse_experiment(j, fs::path(ev_config).parent_path());
      parallel::set_num_threads(cfg.threads);
      const auto graph = load_backbone(cfg.backbone);
      EvalReport report;
      if (cfg.spec.kind == ProtocolKind::one_class) {
        const auto data = load_dataset(cfg.dataset, true);
        report = one_class_eval(cfg.spec, graph, data, progress);
      } else {
        const auto in = load_dataset(cfg.in_dataset, true);
        const auto out = load_dataset(cfg.out_dataset, false);
        report = ood_eval(cfg.spec, graph, in, out, progress);
      }
      report.config = cfg.echo;
      if (!ev_out.empty()) write_report(report, ev_out);
      std::cout << emit_table(std::span<const EvalReport>(&report, 1));
    } else if (*gfit) {
      const auto loaded = formats::load_bank(gf_bank);
      gf_opt.components = gf_m.value_or(loaded.meta.gmm_components);
      const auto model = gmm_fit(*loaded.bank, gf_opt);
      auto j = gmm_to_json(model);
      j["backbone_hash"] = loaded.bank->source().backbone_hash;
      io::write_text(gf_out, j.dump(2) + "\n");
      progress("fit " + std::to_string(model.m()) + " components in " + std::to_string(model.info.iterations) +
               " iterations" + (model.info.converged ? "" : " (not converged)"));
    } else if (*check) {
      namespace t = robustnd::testing;
      const auto sizes = ck_quick ? t::AcceptanceSizes::quick() : t::AcceptanceSizes{};
      std::size_t failed = 0;
      t::run_acceptance(sizes, [&](const t::CriterionResult& r) {
        failed += !r.pass;
        std::cout << t::format_result(r) << std::endl;
      });
      if (!ck_parity.empty()) {
        if (ck_manifest.empty()) throw ValidationError("--parity needs --manifest");
        const auto graph = load_backbone({ck_manifest, ck_weights});
        const auto r = check_parity(graph, load_parity_record(ck_parity));
        failed += !r.pass;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s  %-22s %zu probes, max abs diff %.3e (tolerance %.1e)", r.pass ? "PASS" : "FAIL",
                      "parity", r.probes, r.max_abs_diff, r.tolerance);
        std::cout << buf << std::endl;
      }
      return failed == 0 ? 0 : 1;
    }
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  }
}
