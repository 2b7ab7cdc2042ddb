// Command-line dispatch: one JSON run config plus flag overrides, one seed,
// a manifest per run. Link with OpenSSL::Crypto.
#pragma once

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "judgelab/digest.hpp"
#include "judgelab/pipeline.hpp"

namespace judgelab {

namespace fs = std::filesystem;

/// Every key a run config may carry, with its default.
inline json default_run_config(const fs::path& data_dir) {
  auto optimizer = optimizer_config_to_json(OptimizerConfig{});
  optimizer.erase("seed");
  auto defense = defense_config_to_json(DefenseConfig{});
  defense["detector"] = to_string(Detector::ppl_w);
  defense["clean_n"] = 200;
  return json{{"seed", 0},
              {"out_dir", ""},
              {"template", (data_dir / "judge_template.json").string()},
              {"baselines", (data_dir / "baselines.json").string()},
              {"checkpoint", ""},
              {"vocab", ""},
              {"recipe", judge_recipe_to_json(reference_judge_recipe())},
              {"held_out_n", 200},
              {"attack", attack_setup_to_json(reference_attack_setup())},
              {"pool", ""},
              {"optimizer", optimizer},
              {"cases", ""},
              {"mode", to_string(DecisionMode::likelihood)},
              {"artifact", ""},
              {"baseline_kind", to_string(BaselineKind::naive)},
              {"defense", defense},
              {"inputs", json::array()}};
}

/// Overlays `patch` on `base`, rejecting keys `base` does not know. Objects
/// merge recursively; everything else replaces.
inline void overlay_config(json& base, const json& patch, const std::string& where = "") {
  if (!patch.is_object()) throw ValidationError("config" + where + ": expected an object");
  for (const auto& [key, value] : patch.items()) {
    const auto path = where + "." + key;
    if (!base.contains(key)) throw ValidationError("config: unknown key " + path.substr(1));
    auto& slot = base[key];
    const bool open = key == "recipe";
    if (slot.is_object() && !open) {
      overlay_config(slot, value, path);
    } else if (slot.is_object()) {
      slot.merge_patch(value);
    } else {
      slot = value;
    }
  }
}

/// A manifest written by an earlier run reproduces it: its "config" is used.
inline json load_run_config(const fs::path& path, const fs::path& data_dir) {
  auto cfg = default_run_config(data_dir);
  auto j = read_json(path);
  if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
  overlay_config(cfg, j);
  return cfg;
}

template <typename T>
T config_get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config: " + key + ": " + e.what());
  }
}

class RunContext {
 public:
  RunContext(std::string command, json cfg, std::ostream& log)
      : command_(std::move(command)), cfg_(std::move(cfg)), log_(log) {
    if (!cfg_.at("seed").is_number_unsigned() && !cfg_.at("seed").is_number_integer()) {
      throw ValidationError("config: seed must be an integer");
    }
    if (cfg_.at("seed").is_number_integer() && cfg_.at("seed").get<std::int64_t>() < 0) {
      throw ValidationError("config: seed must be >= 0");
    }
    seed_ = cfg_.at("seed").get<std::uint64_t>();
    out_dir_ = config_get<std::string>(cfg_, "out_dir");
    if (out_dir_.empty()) throw ValidationError("config: out_dir is required (--out)");
  }

  const json& cfg() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  std::ostream& log() { return log_; }

  /// Path of a referenced input file; records its digest.
  fs::path input(const std::string& key) {
    const auto p = config_get<std::string>(cfg_, key);
    if (p.empty()) throw ValidationError("config: " + key + " is required");
    return input_path(key, p);
  }

  fs::path input_path(const std::string& label, const fs::path& p) {
    if (!fs::is_regular_file(p)) throw ValidationError(label + ": file not found: " + p.string());
    inputs_[p.string()] = sha256_file(p);
    return p;
  }

  bool has(const std::string& key) const { return !config_get<std::string>(cfg_, key).empty(); }

  void write(const std::string& name, std::string_view bytes) {
    write_file_atomic(out_dir_ / name, bytes);
    outputs_[name] = sha256_hex(bytes);
  }

  void write_json_file(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void finish() {
    json m{{"command", command_}, {"config", cfg_}, {"inputs", inputs_}, {"outputs", outputs_}};
    write_json(out_dir_ / "manifest.json", m);
  }

 private:
  std::string command_;
  json cfg_;
  std::ostream& log_;
  std::uint64_t seed_ = 0;
  fs::path out_dir_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

struct LoadedJudge {
  Vocab vocab;
  JudgeTemplate tmpl;
  TinyLM model;
};

inline JudgeTemplate load_template(RunContext& ctx) {
  auto t = judge_template_from_json(read_json(ctx.input("template")));
  t.validate();
  return t;
}

inline LoadedJudge load_judge(RunContext& ctx) {
  auto vocab = vocab_from_json(read_json(ctx.input("vocab")));
  auto tmpl = load_template(ctx);
  auto params = load_checkpoint(ctx.input("checkpoint"));
  if (params.config.vocab_size != vocab.size()) {
    throw ValidationError("checkpoint vocabulary size " + std::to_string(params.config.vocab_size) +
                          " does not match vocab file size " + std::to_string(vocab.size()));
  }
  return {std::move(vocab), std::move(tmpl), TinyLM(std::move(params))};
}

inline AttackSetup run_attack_setup(const RunContext& ctx) {
  return attack_setup_from_json(ctx.cfg().at("attack"));
}

inline ShadowPool run_pool(RunContext& ctx, const SyntheticWorld& world, const AttackSetup& a) {
  if (!ctx.has("pool")) return reference_pool(world, a, ctx.seed());
  auto pool = load_pool(ctx.input("pool"));
  if (pool.question != a.question) {
    throw ValidationError("pool question does not match the attacked question");
  }
  return pool;
}

inline std::vector<EvalCase> run_cases(RunContext& ctx, const SyntheticWorld& world) {
  if (ctx.has("cases")) return load_cases(ctx.input("cases"));
  const auto a = run_attack_setup(ctx);
  return held_out_cases(world, a, run_pool(ctx, world, a), ctx.seed());
}

inline std::string cases_to_jsonl(std::span<const EvalCase> cases) {
  std::string out;
  for (const auto& c : cases) out += eval_case_to_json(c).dump() + "\n";
  return out;
}

inline DecisionMode run_mode(const RunContext& ctx) {
  return decision_mode_from_string(config_get<std::string>(ctx.cfg(), "mode"));
}

inline AttackArtifact run_artifact(RunContext& ctx, const Vocab& vocab) {
  if (!ctx.has("artifact")) throw ValidationError("--artifact is required");
  return artifact_from_json(read_json(ctx.input("artifact")), vocab);
}

inline void cmd_train_judge(RunContext& ctx) {
  const auto tmpl = load_template(ctx);
  const auto baselines = BaselineTable::load(ctx.input("baselines"));
  const auto defense = defense_config_from_json(ctx.cfg().at("defense"));
  const auto recipe = judge_recipe_from_json(ctx.cfg().at("recipe"));
  auto world = SyntheticWorld::standard();
  world.vague_fraction = recipe.vague_fraction;
  const std::size_t every = std::max<std::size_t>(1, recipe.train.steps / 10);
  const auto judge = train_synthetic_judge(
      world, tmpl, baselines, defense, recipe, ctx.seed(), [&](std::size_t step, double loss) {
        if (step % every == 0) ctx.log() << "step " << step << " loss " << loss << "\n";
      });
  const auto checkpoint = serialize_checkpoint(judge.params);
  const TinyLM lm(deserialize_checkpoint(checkpoint));
  const auto stats = held_out_stats(lm, judge.vocab, tmpl, world,
                                    config_get<std::size_t>(ctx.cfg(), "held_out_n"),
                                    derive_seed(ctx.seed(), "held_out"));
  ctx.write("judge.ckpt", checkpoint);
  ctx.write_json_file("vocab.json", vocab_to_json(judge.vocab));
  ctx.write_json_file("train.json", json{{"loss_before", judge.loss_before},
                                         {"loss_after", judge.loss_after},
                                         {"held_out", held_out_stats_to_json(stats)}});
  ctx.log() << "held-out accuracy " << stats.accuracy << "\n";
}

inline void cmd_optimize(RunContext& ctx) {
  const auto judge = load_judge(ctx);
  const auto world = SyntheticWorld::standard();
  const auto a = run_attack_setup(ctx);
  const auto pool = run_pool(ctx, world, a);
  const auto problem = make_attack_problem(judge.vocab, judge.tmpl, a, pool, ctx.seed());
  auto cfg = optimizer_config_from_json(ctx.cfg().at("optimizer"));
  cfg.seed = derive_seed(ctx.seed(), "optimize");
  cfg.validate();
  const std::size_t every = std::max<std::size_t>(1, cfg.max_iters / 10);
  const auto art = run_attack(judge.model, problem, cfg, std::nullopt, [&](const TraceRecord& r) {
    if (r.iter % every == 0 || r.success) {
      ctx.log() << "iter " << r.iter << " C_R " << r.c_r << " loss " << r.loss
                << (r.success ? " success" : "") << "\n";
    }
  });
  ctx.write("pool.jsonl", pool_to_jsonl(pool));
  ctx.write_json_file("artifact.json", artifact_to_json(art));
  ctx.log() << (art.complete ? "complete" : "incomplete") << ", delta: " << art.delta_text << "\n";
}

inline void cmd_evaluate(RunContext& ctx) {
  const auto judge = load_judge(ctx);
  const auto art = run_artifact(ctx, judge.vocab);
  const auto cases = run_cases(ctx, SyntheticWorld::standard());
  const auto report = evaluate_delta(judge.model, judge.vocab, judge.tmpl, cases, art.delta, run_mode(ctx));
  ctx.write("cases.jsonl", cases_to_jsonl(cases));
  ctx.write_json_file("report.json", metrics_report_to_json(report));
  ctx.write("report.csv", metrics_report_to_csv(report));
  ctx.log() << "ACC " << report.acc << " ASR-B " << report.asr_b << " ASR " << report.asr << " PAC "
            << report.pac << "\n";
}

inline void cmd_baseline(RunContext& ctx) {
  const auto judge = load_judge(ctx);
  const auto table = BaselineTable::load(ctx.input("baselines"));
  const auto kind = baseline_kind_from_string(config_get<std::string>(ctx.cfg(), "baseline_kind"));
  const auto cases = run_cases(ctx, SyntheticWorld::standard());
  const auto report =
      evaluate_baseline(judge.model, judge.vocab, judge.tmpl, cases, table, kind, run_mode(ctx));
  const auto stem = "baseline_" + to_string(kind);
  ctx.write("cases.jsonl", cases_to_jsonl(cases));
  ctx.write_json_file(stem + ".json", metrics_report_to_json(report));
  ctx.write(stem + ".csv", metrics_report_to_csv(report));
  ctx.log() << to_string(kind) << ": ACC " << report.acc << " ASR-B " << report.asr_b << " ASR "
            << report.asr << " PAC " << report.pac << "\n";
}

inline void cmd_defend(RunContext& ctx) {
  const auto judge = load_judge(ctx);
  const auto art = run_artifact(ctx, judge.vocab);
  const auto& dj = ctx.cfg().at("defense");
  const auto dcfg = defense_config_from_json(dj);
  const auto detector = detector_from_string(dj.at("detector").get<std::string>());
  const auto world = SyntheticWorld::standard();
  const auto cases = run_cases(ctx, world);
  auto [injected, clean] = screening_sets(judge.vocab, cases, art.delta);
  if (!ctx.has("cases")) {
    // Synthesized runs calibrate on a larger clean sample of the question.
    const auto a = run_attack_setup(ctx);
    const auto extra = world.attack_cases(a.question, a.target_response,
                                          dj.at("clean_n").get<std::size_t>(), 2, {},
                                          derive_seed(ctx.seed(), "defense"));
    clean.clear();
    for (const auto& c : extra) clean.push_back({c.question, c.clean_responses[0]});
  }
  const auto report = run_detector(judge.model, judge.vocab, detector, injected, clean, dcfg);
  ctx.write_json_file("defense_" + to_string(detector) + ".json", defense_report_to_json(report));
  ctx.log() << to_string(detector) << ": FNR " << report.metrics.fnr << " FPR " << report.metrics.fpr
            << "\n";
}

/// Plot-ready CSV tables from earlier outputs: metric reports, defense
/// reports and attack traces, each recognized by its keys.
inline void cmd_report(RunContext& ctx) {
  const auto inputs = config_get<std::vector<std::string>>(ctx.cfg(), "inputs");
  if (inputs.empty()) throw ValidationError("report: no --inputs given");
  std::ostringstream metrics, defense, trace;
  metrics << "source,acc,asr_b,asr,pac\n";
  defense << "source,detector,fnr,fpr,n_injected,n_clean\n";
  trace << "source,iter,c_r,loss,aligned,enhancement,perplexity,success\n";
  bool any_m = false, any_d = false, any_t = false;
  for (const auto& in : inputs) {
    const auto j = read_json(ctx.input_path("inputs", in));
    if (j.contains("average")) {
      const auto& a = j["average"];
      metrics << in << ',' << a.at("acc").get<double>() << ',' << a.at("asr_b").get<double>() << ','
              << a.at("asr").get<double>() << ',' << a.at("pac").get<double>() << '\n';
      any_m = true;
    } else if (j.contains("fnr")) {
      defense << in << ',' << j.at("detector").get<std::string>() << ',' << j.at("fnr").get<double>()
              << ',' << j.at("fpr").get<double>() << ',' << j.at("n_injected").get<std::size_t>()
              << ',' << j.at("n_clean").get<std::size_t>() << '\n';
      any_d = true;
    } else if (j.contains("trace")) {
      for (const auto& r : j["trace"]) {
        trace << in << ',' << r.at("iter").get<std::size_t>() << ','
              << r.at("c_r").get<std::size_t>() << ',' << r.at("loss").get<double>() << ','
              << r.at("aligned").get<double>() << ',' << r.at("enhancement").get<double>() << ','
              << r.at("perplexity").get<double>() << ',' << r.at("success").get<bool>() << '\n';
      }
      any_t = true;
    } else {
      throw ValidationError("report: unrecognized input " + in);
    }
  }
  if (any_m) ctx.write("metrics.csv", metrics.str());
  if (any_d) ctx.write("defense.csv", defense.str());
  if (any_t) ctx.write("trace.csv", trace.str());
}

/// Runs one invocation. Returns 0 on success, 1 on validation errors and
/// usage errors, 2 on runtime errors.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
                    const fs::path& data_dir) {
  CLI::App app{"Judge prompt-injection harness"};
  app.require_subcommand(1, 1);

  struct Flags {
    std::string config, out, checkpoint, vocab, tmpl, baselines, pool, cases, artifact, kind,
        detector, mode, question, target, init, attach;
    std::uint64_t seed = 0;
    std::size_t steps = 0, iters = 0, length = 0, top_k = 0, batch = 0, num_sets = 0, set_size = 0,
                num_cases = 0, window = 0;
    double lr = 0, init_std = 0, alpha = 0, beta = 0, fpr = 0;
    std::vector<std::string> inputs;
  } f;
  std::vector<std::pair<std::string, CLI::Option*>> opts;
  auto add = [&](const std::string& key, CLI::Option* o) { opts.emplace_back(key, o); };

  auto common = [&](CLI::App* s) {
    add("config", s->add_option("--config", f.config, "JSON run config or manifest"));
    add("out", s->add_option("--out", f.out, "output directory"));
    add("seed", s->add_option("--seed", f.seed, "run seed"));
    add("template", s->add_option("--template", f.tmpl, "judge template JSON"));
    add("baselines", s->add_option("--baselines", f.baselines, "baseline table JSON"));
  };
  auto judge_inputs = [&](CLI::App* s) {
    add("checkpoint", s->add_option("--checkpoint", f.checkpoint, "judge checkpoint"));
    add("vocab", s->add_option("--vocab", f.vocab, "judge vocabulary JSON"));
  };
  auto eval_inputs = [&](CLI::App* s) {
    add("cases", s->add_option("--cases", f.cases, "evaluation cases JSONL"));
    add("mode", s->add_option("--mode", f.mode, "likelihood or greedy"));
    add("question", s->add_option("--question", f.question, "attacked question"));
    add("target", s->add_option("--target", f.target, "target response"));
    add("pool", s->add_option("--pool", f.pool, "shadow pool JSONL"));
    add("num_cases", s->add_option("--num-cases", f.num_cases, "synthesized case count"));
  };

  auto* train = app.add_subcommand("train-judge", "synthesize a corpus and train the judge");
  common(train);
  add("steps", train->add_option("--steps", f.steps, "training steps"));
  add("lr", train->add_option("--lr", f.lr, "peak learning rate"));
  add("init_std", train->add_option("--init-std", f.init_std, "initialisation scale"));

  auto* optimize = app.add_subcommand("optimize", "search for an injected sequence");
  common(optimize);
  judge_inputs(optimize);
  add("question", optimize->add_option("--question", f.question, "attacked question"));
  add("target", optimize->add_option("--target", f.target, "target response"));
  add("pool", optimize->add_option("--pool", f.pool, "shadow pool JSONL"));
  add("M", optimize->add_option("-M,--sets", f.num_sets, "shadow sets"));
  add("m", optimize->add_option("-m,--set-size", f.set_size, "candidates per shadow set"));
  add("iters", optimize->add_option("-T,--iters", f.iters, "iteration budget"));
  add("length", optimize->add_option("-l,--length", f.length, "injected sequence length"));
  add("top_k", optimize->add_option("-K,--top-k", f.top_k, "candidates per coordinate"));
  add("batch", optimize->add_option("-B,--batch", f.batch, "batch size"));
  add("alpha", optimize->add_option("--alpha", f.alpha, "enhancement weight"));
  add("beta", optimize->add_option("--beta", f.beta, "perplexity weight"));
  add("init", optimize->add_option("--init", f.init, "word, character or sentence"));
  add("attach", optimize->add_option("--attach", f.attach, "suffix, prefix or both"));

  auto* evaluate = app.add_subcommand("evaluate", "score an injected sequence");
  common(evaluate);
  judge_inputs(evaluate);
  eval_inputs(evaluate);
  add("artifact", evaluate->add_option("--artifact", f.artifact, "attack artifact JSON"));

  auto* baseline = app.add_subcommand("baseline", "score a manual baseline in place of the sequence");
  common(baseline);
  judge_inputs(baseline);
  eval_inputs(baseline);
  add("kind", baseline->add_option("--kind", f.kind, "baseline kind"));

  auto* defend = app.add_subcommand("defend", "screen injected responses with a detector");
  common(defend);
  judge_inputs(defend);
  eval_inputs(defend);
  add("artifact", defend->add_option("--artifact", f.artifact, "attack artifact JSON"));
  add("detector", defend->add_option("--detector", f.detector, "known_answer, ppl or ppl_w"));
  add("window", defend->add_option("--window", f.window, "window length"));
  add("fpr", defend->add_option("--fpr", f.fpr, "target false positive rate"));

  auto* report = app.add_subcommand("report", "merge run outputs into CSV tables");
  common(report);
  add("inputs", report->add_option("--inputs", f.inputs, "report, defense or artifact JSON files"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << app.help();
    return 1;
  }

  const auto* sub = app.get_subcommands().front();
  auto given = [&](const std::string& key) {
    for (const auto& [k, o] : opts) {
      if (k == key && o->count() > 0) return true;
    }
    return false;
  };
  try {
    json cfg = f.config.empty() ? default_run_config(data_dir) : load_run_config(f.config, data_dir);
    auto set = [&](const std::string& key, json::json_pointer ptr, const json& v) {
      if (given(key)) cfg[ptr] = v;
    };
    set("out", json::json_pointer("/out_dir"), f.out);
    set("seed", json::json_pointer("/seed"), f.seed);
    set("template", json::json_pointer("/template"), f.tmpl);
    set("baselines", json::json_pointer("/baselines"), f.baselines);
    set("checkpoint", json::json_pointer("/checkpoint"), f.checkpoint);
    set("vocab", json::json_pointer("/vocab"), f.vocab);
    set("pool", json::json_pointer("/pool"), f.pool);
    set("cases", json::json_pointer("/cases"), f.cases);
    set("artifact", json::json_pointer("/artifact"), f.artifact);
    set("kind", json::json_pointer("/baseline_kind"), f.kind);
    set("mode", json::json_pointer("/mode"), f.mode);
    set("question", json::json_pointer("/attack/question"), f.question);
    set("target", json::json_pointer("/attack/target_response"), f.target);
    set("num_cases", json::json_pointer("/attack/num_cases"), f.num_cases);
    set("M", json::json_pointer("/attack/M"), f.num_sets);
    set("m", json::json_pointer("/attack/m"), f.set_size);
    set("steps", json::json_pointer("/recipe/train/steps"), f.steps);
    set("lr", json::json_pointer("/recipe/train/lr"), f.lr);
    set("init_std", json::json_pointer("/recipe/model/init_std"), f.init_std);
    set("iters", json::json_pointer("/optimizer/T"), f.iters);
    set("length", json::json_pointer("/optimizer/l"), f.length);
    set("top_k", json::json_pointer("/optimizer/K"), f.top_k);
    set("batch", json::json_pointer("/optimizer/B"), f.batch);
    set("alpha", json::json_pointer("/optimizer/alpha"), f.alpha);
    set("beta", json::json_pointer("/optimizer/beta"), f.beta);
    set("init", json::json_pointer("/optimizer/init"), f.init);
    set("attach", json::json_pointer("/optimizer/attach"), f.attach);
    set("detector", json::json_pointer("/defense/detector"), f.detector);
    set("window", json::json_pointer("/defense/window"), f.window);
    set("fpr", json::json_pointer("/defense/target_fpr"), f.fpr);
    set("inputs", json::json_pointer("/inputs"), f.inputs);

    const std::string name = sub->get_name();
    if (name == "evaluate" || name == "defend") {
      if (config_get<std::string>(cfg, "artifact").empty()) {
        throw ValidationError("--artifact is required");
      }
    }
    RunContext ctx(name, cfg, err);
    if (name == "train-judge") {
      cmd_train_judge(ctx);
    } else if (name == "optimize") {
      cmd_optimize(ctx);
    } else if (name == "evaluate") {
      cmd_evaluate(ctx);
    } else if (name == "baseline") {
      cmd_baseline(ctx);
    } else if (name == "defend") {
      cmd_defend(ctx);
    } else {
      cmd_report(ctx);
    }
    ctx.finish();
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace judgelab
