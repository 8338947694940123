#include "gatescale/harness/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <ostream>

#include "gatescale/cmaes/cmaes.hpp"
#include "gatescale/harness/parallel.hpp"
#include "gatescale/numerics/errors.hpp"

namespace gatescale::harness {

namespace {

constexpr std::uint64_t kInitStream = 0x696e6974;   // "init"
constexpr std::uint64_t kTrainStream = 0x74726e;    // "trn"
constexpr std::uint64_t kCmaStream = 0x636d61;      // "cma"

using calibration::CalibrationVector;
using calibration::ConditionRole;
using calibration::EnsembleSpec;
using calibration::Granularity;

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& header) : text_(header + "\n") {}
  template <typename... Cells>
  void row(const Cells&... cells) {
    std::size_t i = 0;
    ((text_ += (i++ ? "," : "") + cell(cells)), ...);
    text_ += '\n';
  }
  void raw(const std::string& line) { text_ += line + "\n"; }
  const std::string& text() const noexcept { return text_; }

 private:
  static std::string cell(double v) { return format_csv_double(v); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  std::string text_;
};

void say(const CommandContext& ctx, const std::string& msg) {
  if (ctx.log) *ctx.log << msg << std::endl;
}

void write_manifest(const CommandContext& ctx, const std::string& command) {
  write_file(ctx.out_path(command + ".manifest"), "# " + command + "\n" + ctx.config.manifest());
}

Checkpoint load_for(const CommandContext& ctx) {
  Checkpoint ckpt = load_checkpoint(ctx.checkpoint_path());
  if (ckpt.model.arch().class_count != ctx.config.arch.class_count)
    throw PersistenceError("checkpoint class count differs from the config");
  return ckpt;
}

const rewards::ReferenceSet* refs_for(const rewards::RewardSpec& r, const Checkpoint& ckpt) {
  return r.needs_reference() ? &ckpt.references : nullptr;
}

std::string block_label(long b) { return b < 0 ? "baseline" : std::to_string(b); }

}  // namespace

std::string CommandContext::checkpoint_path() const {
  return config.checkpoint.empty() ? out_path("model.ckpt") : config.checkpoint;
}

std::string CommandContext::out_path(const std::string& file) const {
  return (std::filesystem::path(out_dir) / file).string();
}

double bucket_diversity(const rewards::Bucket& bucket, const std::vector<Tensor>& images) {
  std::map<std::size_t, std::vector<Tensor>> groups;
  for (std::size_t i = 0; i < bucket.items.size(); ++i) groups[bucket.items[i].class_id].push_back(images[i]);
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& [cls, imgs] : groups) {
    if (imgs.size() < 2) continue;
    total += rewards::diversity_pairwise(imgs);
    ++counted;
  }
  if (counted == 0) throw ContractError("bucket_diversity: no class has two samples");
  return total / static_cast<double>(counted);
}

// --- train ---------------------------------------------------------------------

std::vector<dit::LossPoint> cmd_train(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  Rng init_rng(cfg.seed, kInitStream);
  dit::DitModel model(cfg.arch, init_rng);
  Rng train_rng(cfg.seed, kTrainStream);
  say(ctx, "training " + std::to_string(cfg.train.steps) + " steps, " + std::to_string(model.parameter_count()) +
               " parameters");
  const long report_every = std::max<long>(1, cfg.train.steps / 20);
  const auto curve = dit::train(model, cfg.train, train_rng, [&](long step, double loss) {
    if ((step + 1) % report_every == 0) say(ctx, "  step " + std::to_string(step + 1) + " loss " + format_double(loss));
  });

  Checkpoint ckpt{std::move(model),
                  rewards::ReferenceSet::generate(cfg.arch.class_count, cfg.reference_count, cfg.train.data.noise_std,
                                                  cfg.seed),
                  cfg.seed,
                  {}};
  ckpt.provenance["steps"] = std::to_string(cfg.train.steps);
  if (!curve.empty()) {
    ckpt.provenance["initial_loss"] = format_csv_double(curve.front().loss);
    ckpt.provenance["final_loss"] = format_csv_double(curve.back().loss);
  }
  ckpt.provenance["config"] = cfg.manifest();
  save_checkpoint(ctx.checkpoint_path(), ckpt);

  CsvWriter csv("step,loss");
  for (const auto& p : curve) csv.row(p.step, p.loss);
  write_file(ctx.out_path("train_loss.csv"), csv.text());
  write_manifest(ctx, "train");
  return curve;
}

// --- ablate / sweep ------------------------------------------------------------------

namespace {

CalibrationVector ablation_vector(const dit::ArchSpec& arch, long block) {
  std::vector<double> flat = CalibrationVector::identity(Granularity::Gate, arch).to_flat();
  if (block >= 0) {
    const std::size_t per = arch.gates_per_block();
    for (std::size_t k = 0; k < per; ++k) flat[1 + static_cast<std::size_t>(block) * per + k] = 0.0;
  }
  return CalibrationVector::from_flat(flat, Granularity::Gate, arch);
}

CalibrationVector block_scale_vector(const dit::ArchSpec& arch, long block, double s) {
  std::vector<double> flat = CalibrationVector::identity(Granularity::Block, arch).to_flat();
  flat[1 + static_cast<std::size_t>(block)] = s;
  return CalibrationVector::from_flat(flat, Granularity::Block, arch);
}

double eval_mean(const CalibrationVector& c, const Checkpoint& ckpt, const rewards::Bucket& bucket,
                 const rewards::RewardSpec& reward, std::size_t nfe) {
  return rewards::evaluate_candidate(c, ckpt.model, bucket, reward, refs_for(reward, ckpt), nfe).mean;
}

}  // namespace

std::vector<AblationRow> cmd_ablate(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  const Checkpoint ckpt = load_for(ctx);
  const dit::ArchSpec& arch = ckpt.model.arch();
  const auto reward = cfg.reward_spec();
  const auto classes = cfg.classes();

  std::vector<AblationRow> rows;
  for (long b = -1; b < static_cast<long>(arch.depth); ++b)
    for (std::uint64_t seed : cfg.eval_seeds) rows.push_back({b, seed, 0.0});
  say(ctx, "ablation: " + std::to_string(rows.size()) + " evaluations");
  const auto rewards_out = parallel_map<double>(rows.size(), ctx.threads, [&](std::size_t i) {
    const auto bucket = rewards::Bucket::evaluation(rows[i].seed, classes, cfg.eval_conditions);
    return eval_mean(ablation_vector(arch, rows[i].block), ckpt, bucket, reward, cfg.eval_nfe);
  });
  CsvWriter csv("block_id,seed,reward");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].reward = rewards_out[i];
    csv.row(block_label(rows[i].block), rows[i].seed, rows[i].reward);
  }
  write_file(ctx.out_path("ablate.csv"), csv.text());
  write_manifest(ctx, "ablate");
  return rows;
}

std::vector<SweepRow> cmd_sweep_scale(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  const Checkpoint ckpt = load_for(ctx);
  const dit::ArchSpec& arch = ckpt.model.arch();
  const auto reward = cfg.reward_spec();
  const auto classes = cfg.classes();

  std::vector<SweepRow> rows;
  for (long b = 0; b < static_cast<long>(arch.depth); ++b)
    for (double s : cfg.sweep_scales)
      for (std::uint64_t seed : cfg.eval_seeds) rows.push_back({b, s, seed, 0.0});
  say(ctx, "scale sweep: " + std::to_string(rows.size()) + " evaluations");
  const auto rewards_out = parallel_map<double>(rows.size(), ctx.threads, [&](std::size_t i) {
    const auto bucket = rewards::Bucket::evaluation(rows[i].seed, classes, cfg.eval_conditions);
    // s = 0 goes through the ablation vector so both commands share one code path.
    const CalibrationVector c = rows[i].scale == 0.0 ? ablation_vector(arch, rows[i].block)
                                : rows[i].scale == 1.0 ? ablation_vector(arch, -1)
                                                       : block_scale_vector(arch, rows[i].block, rows[i].scale);
    return eval_mean(c, ckpt, bucket, reward, cfg.eval_nfe);
  });
  CsvWriter csv("block_id,s,seed,reward");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].reward = rewards_out[i];
    csv.row(rows[i].block, rows[i].scale, rows[i].seed, rows[i].reward);
  }
  write_file(ctx.out_path("sweep_scale.csv"), csv.text());
  write_manifest(ctx, "sweep_scale");
  return rows;
}

// --- calibrate --------------------------------------------------------------------------

namespace {

struct Evaluator {
  const Checkpoint& ckpt;
  Granularity granularity;
  std::vector<ConditionRole> roles;
  rewards::RewardSpec reward;
  std::size_t nfe;

  rewards::BucketResult operator()(std::span<const double> flat, const rewards::Bucket& bucket) const {
    const dit::ArchSpec& arch = ckpt.model.arch();
    const auto* refs = refs_for(reward, ckpt);
    if (roles.size() == 1 && roles.front() == ConditionRole::Conditional)
      return rewards::evaluate_candidate(CalibrationVector::from_flat(flat, granularity, arch), ckpt.model, bucket,
                                         reward, refs, nfe);
    return rewards::evaluate_candidate(EnsembleSpec::from_flat(flat, granularity, arch, roles), ckpt.model, bucket,
                                       reward, refs, nfe);
  }
};

}  // namespace

CalibrationRun cmd_calibrate(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  const Checkpoint ckpt = load_for(ctx);
  const dit::ArchSpec& arch = ckpt.model.arch();
  const auto classes = cfg.classes();

  std::vector<ConditionRole> roles{ConditionRole::Conditional};
  if (cfg.models == 2) roles.push_back(cfg.second_role);
  const std::size_t per = calibration::dimension(cfg.granularity, arch);
  const std::size_t d = per * roles.size();
  if (d > cfg.max_dimension)
    throw DimensionGuardError("calibration dimension " + std::to_string(d) + " exceeds calibrate.max_dimension " +
                              std::to_string(cfg.max_dimension));

  // The starting mean reproduces the original model: the first member at
  // ω = 1, further members at ω = 0, all scales 1.
  std::vector<double> mean0;
  for (std::size_t m = 0; m < roles.size(); ++m) {
    auto flat = CalibrationVector::identity(cfg.granularity, arch).to_flat();
    flat[0] = m == 0 ? 1.0 : 0.0;
    mean0.insert(mean0.end(), flat.begin(), flat.end());
  }

  const Evaluator evaluate{ckpt, cfg.granularity, roles, cfg.reward_spec(), cfg.nfe_train};
  const auto heldout = rewards::Bucket::heldout(cfg.seed, classes, cfg.heldout_size);
  CalibrationRun run;
  run.baseline_heldout = evaluate(mean0, heldout).mean;

  cmaes::CmaState state(d, Tensor::vector(mean0), cfg.sigma0, Rng(cfg.seed, kCmaStream),
                        cmaes::CmaOptions{cfg.population});
  const cmaes::StopCriteria criteria{cfg.sigma_stop, cfg.plateau_epsilon, cfg.plateau_window, cfg.max_generations};
  say(ctx, "calibrating d=" + std::to_string(d) + " lambda=" + std::to_string(state.population()) +
               " baseline held-out " + format_double(run.baseline_heldout));

  std::string header = "generation,candidate,train_reward";
  for (std::size_t j = 0; j < d; ++j) header += ",c" + std::to_string(j);
  CsvWriter candidates_csv(header);

  std::vector<double> best_vec = mean0;
  double best_heldout = -std::numeric_limits<double>::infinity();
  double train_best_so_far = -std::numeric_limits<double>::infinity();
  std::vector<double> history;
  while (true) {
    const long gen = state.generation();
    const std::vector<Tensor> cands = state.ask();
    const auto bucket = rewards::Bucket::train(cfg.seed, gen, classes, cfg.bucket_size);
    const auto scores = parallel_map<double>(cands.size(), ctx.threads,
                                             [&](std::size_t i) { return evaluate(cands[i].data(), bucket).mean; });
    const std::size_t top = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
    const double heldout_r = evaluate(cands[top].data(), heldout).mean;
    if (heldout_r > best_heldout) {
      best_heldout = heldout_r;
      best_vec = cands[top].values();
    }
    if (gen == 0)
      for (const Tensor& c : cands) run.first_candidates.push_back(c.values());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      std::string line = std::to_string(gen) + "," + std::to_string(i) + "," + format_csv_double(scores[i]);
      for (double v : cands[i].values()) line += "," + format_csv_double(v);
      candidates_csv.raw(line);
    }
    state.tell(scores);
    history.push_back(best_heldout);
    train_best_so_far = std::max(train_best_so_far, scores[top]);

    GenerationRecord rec;
    rec.generation = gen;
    rec.sigma = state.sigma();
    rec.train_best = scores[top];
    rec.train_worst = *std::min_element(scores.begin(), scores.end());
    double total = 0.0;
    for (double s : scores) total += s;
    rec.train_mean = total / static_cast<double>(scores.size());
    rec.train_best_so_far = train_best_so_far;
    rec.heldout_reward = heldout_r;
    rec.heldout_best_so_far = best_heldout;
    rec.condition_number = state.condition_number();
    run.log.push_back(rec);
    if (gen % 10 == 0)
      say(ctx, "  gen " + std::to_string(gen) + " sigma " + format_double(rec.sigma) + " train " +
                   format_double(rec.train_best) + " held-out best " + format_double(best_heldout));

    if (state.generation() >= cfg.min_generations) {
      const auto report = cmaes::should_stop(state, history, criteria);
      if (report.stop) {
        run.stop_trigger = report.trigger;
        break;
      }
    }
  }

  run.selected_heldout = best_heldout;
  run.mean_heldout = evaluate(state.mean().data(), heldout).mean;

  Sidecar& s = run.sidecar;
  s.arch_hash = arch.hash();
  s.granularity = cfg.granularity;
  s.roles = roles;
  s.selected = best_vec;
  s.mean = state.mean().values();
  s.provenance = {{"reward", cfg.reward_spec().name()},
                  {"generations", std::to_string(state.generation())},
                  {"evaluations", std::to_string(state.evaluations())},
                  {"seed", std::to_string(cfg.seed)},
                  {"nfe", std::to_string(cfg.nfe_train)},
                  {"population", std::to_string(state.population())},
                  {"sigma0", format_csv_double(cfg.sigma0)},
                  {"sigma_final", format_csv_double(state.sigma())},
                  {"stop_trigger", run.stop_trigger},
                  {"dimension", std::to_string(d)},
                  {"scale_count", std::to_string(d - roles.size())},
                  {"selection", "best_heldout_candidate"},
                  {"baseline_heldout_reward", format_csv_double(run.baseline_heldout)},
                  {"selected_heldout_reward", format_csv_double(run.selected_heldout)},
                  {"mean_heldout_reward", format_csv_double(run.mean_heldout)}};
  const auto& k = state.constants();
  s.provenance["cma.mu"] = std::to_string(k.mu);
  s.provenance["cma.mu_eff"] = format_csv_double(k.mu_eff);
  s.provenance["cma.c_sigma"] = format_csv_double(k.c_sigma);
  s.provenance["cma.d_sigma"] = format_csv_double(k.d_sigma);
  s.provenance["cma.c_c"] = format_csv_double(k.c_c);
  s.provenance["cma.c_1"] = format_csv_double(k.c_1);
  s.provenance["cma.c_mu"] = format_csv_double(k.c_mu);
  save_sidecar(ctx.out_path("calibration.sidecar"), s);

  CsvWriter log("generation,sigma,train_best,train_mean,train_worst,train_best_so_far,heldout_reward,"
                "heldout_best_so_far,condition_number");
  for (const auto& r : run.log)
    log.row(r.generation, r.sigma, r.train_best, r.train_mean, r.train_worst, r.train_best_so_far, r.heldout_reward,
            r.heldout_best_so_far, r.condition_number);
  write_file(ctx.out_path("calibrate_log.csv"), log.text());
  write_file(ctx.out_path("calibrate_candidates.csv"), candidates_csv.text());
  write_manifest(ctx, "calibrate");
  say(ctx, "stopped by " + run.stop_trigger + " after " + std::to_string(state.generation()) +
               " generations; held-out " + format_double(run.selected_heldout) + " vs baseline " +
               format_double(run.baseline_heldout));
  return run;
}

// --- eval --------------------------------------------------------------------------------

std::vector<EvalRow> cmd_eval(const CommandContext& ctx) {
  const RunConfig& cfg = ctx.config;
  const Checkpoint ckpt = load_for(ctx);
  const dit::ArchSpec& arch = ckpt.model.arch();
  const auto reward = cfg.reward_spec();
  const auto classes = cfg.classes();

  std::vector<std::string> models{"baseline"};
  std::optional<Sidecar> sidecar;
  if (!cfg.eval_calibration.empty()) {
    sidecar = load_sidecar(cfg.eval_calibration);
    sidecar->selected_spec(arch);  // validates against the checkpoint
    models.push_back("calibrated");
  }
  const Evaluator calibrated{ckpt, sidecar ? sidecar->granularity : Granularity::Block,
                             sidecar ? sidecar->roles : std::vector<ConditionRole>{}, reward, 0};

  std::vector<EvalRow> rows;
  for (const std::string& m : models)
    for (std::size_t nfe : cfg.eval_nfe_list)
      for (std::uint64_t seed : cfg.eval_seeds) rows.push_back({m, nfe, seed, 0.0, 0.0});
  say(ctx, "eval: " + std::to_string(rows.size()) + " evaluations");
  const auto results = parallel_map<std::pair<double, double>>(rows.size(), ctx.threads, [&](std::size_t i) {
    const EvalRow& r = rows[i];
    const auto bucket = rewards::Bucket::evaluation(r.seed, classes, cfg.eval_conditions);
    rewards::BucketResult res;
    if (r.model == "baseline") {
      res = rewards::evaluate_candidate(ablation_vector(arch, -1), ckpt.model, bucket, reward, refs_for(reward, ckpt),
                                        r.nfe);
    } else {
      Evaluator e = calibrated;
      e.nfe = r.nfe;
      res = e(sidecar->selected, bucket);
    }
    return std::pair{res.mean, bucket_diversity(bucket, res.images)};
  });
  CsvWriter csv("model,nfe,seed,reward,diversity");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].reward = results[i].first;
    rows[i].diversity = results[i].second;
    csv.row(rows[i].model, rows[i].nfe, rows[i].seed, rows[i].reward, rows[i].diversity);
  }
  write_file(ctx.out_path("eval.csv"), csv.text());
  write_manifest(ctx, "eval");
  return rows;
}

}  // namespace gatescale::harness
