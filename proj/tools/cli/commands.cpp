// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "imvae/io/checkpoint.hpp"
#include "imvae/io/metrics.hpp"
#include "imvae/io/model_io.hpp"
#include "imvae/mixture/dp_mixture.hpp"
#include "imvae/moe/moe.hpp"

namespace imvae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Halted {};

class Clock {
 public:
  explicit Clock(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  std::optional<double> elapsed_ms() const {
    if (!enabled_) return std::nullopt;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

std::string out_file(const RunConfig& c, const std::string& name) { return (fs::path(c.out_dir()) / name).string(); }

void ensure_out_dir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out_dir(), ec);
  if (ec) throw IoError("cannot create output directory " + c.out_dir() + ": " + ec.message());
}

// Fresh metrics stream for one command run.
io::MetricsWriter fresh_metrics(const RunConfig& c, const std::string& name) {
  const std::string path = out_file(c, name);
  std::error_code ec;
  fs::remove(path, ec);
  return io::MetricsWriter(path, c.echo());
}

std::string run_id(const std::string& command, const RunConfig& c) {
  return command + "-s" + std::to_string(c.seed());
}

RngStream root_rng(const RunConfig& c) { return RngStream(c.seed(), 0); }

std::string fmt(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

io::Checkpoint new_checkpoint(const RunConfig& c, const std::string& command) {
  io::Checkpoint ckpt;
  ckpt.config = c.echo();
  ckpt.meta["run"] = json{{"command", command}, {"seed", c.seed()}};
  return ckpt;
}

io::Checkpoint open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw IoError("checkpoint not found: " + path);
  return io::load_checkpoint(path);
}

mixture::MixtureState load_mixture_for(const RunConfig& c, std::size_t input_dim) {
  mixture::MixtureState state = io::load_mixture(open_checkpoint(mixture_checkpoint_path(c)));
  if (state.components.empty()) throw IoError("mixture checkpoint holds no components");
  if (state.components.front().model.config().input_dim != input_dim)
    throw DimensionError("mixture expects " + std::to_string(state.components.front().model.config().input_dim) +
                         " input columns, dataset has " + std::to_string(input_dim));
  return state;
}

const io::Dataset& eval_split(const RunConfig& c, const Data& d) {
  if (c.text("eval_split") == "test") {
    if (!d.test) throw InvalidArgument("eval_split = test but no test set is configured");
    return *d.test;
  }
  return d.train;
}

io::Dataset limit_rows(const io::Dataset& d, std::size_t rows) {
  if (rows == 0 || rows >= d.size()) return d;
  std::vector<std::size_t> idx(rows);
  for (std::size_t i = 0; i < rows; ++i) idx[i] = i;
  return d.subset(idx);
}

std::vector<double> l2_errors(const Tensor& x, const Tensor& xhat) {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double diff = x(i, j) - xhat(i, j);
      s += diff * diff;
    }
    out[i] = std::sqrt(s);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double e : v) s += e;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double e : v) s += (e - m) * (e - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::ofstream open_text(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  return f;
}

// Drops sweep rows past `sweeps_done` so a resumed run appends exactly what
// the uninterrupted run would have written.
void trim_sweep_rows(const std::string& path, std::size_t column, const std::string& phase, std::size_t sweeps_done) {
  std::ifstream in(path);
  if (!in) throw IoError("resume: missing " + path);
  std::string line, kept;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    bool keep = true;
    if (line.rfind('#', 0) != 0 && cells.size() > column && (phase.empty() || cells[1] == phase)) {
      try {
        keep = std::stoull(cells[column]) <= sweeps_done;
      } catch (const std::exception&) {
        keep = true;  // header
      }
    }
    if (keep) kept += line + "\n";
  }
  in.close();
  open_text(path) << kept;
}

constexpr const char* kSweepLogHeader = "sweep,component_count,reassignments,spawns,removals,elbo";

std::string sweep_log_row(const mixture::MixtureState& s, const mixture::SweepStats& st) {
  return std::to_string(s.progress.sweeps_done) + "," + std::to_string(st.components_after) + "," +
         std::to_string(st.reassignments) + "," + std::to_string(st.spawns) + "," + std::to_string(st.removals) +
         "," + fmt(st.elbo);
}

}  // namespace

std::string base_checkpoint_path(const RunConfig& c) {
  const std::string p = c.text("base_checkpoint");
  return p.empty() ? out_file(c, "base.ckpt") : p;
}

std::string mixture_checkpoint_path(const RunConfig& c) {
  const std::string p = c.text("mixture_checkpoint");
  return p.empty() ? out_file(c, "mixture.ckpt") : p;
}

Data load_data(const RunConfig& c) {
  Data d;
  const std::string kind = c.text("data");
  if (kind == "synthetic") {
    const RngStream rng = RngStream(c.data_seed(), 0).fork(stream_tag("data"));
    const std::size_t k = c.count("synth_classes");
    RngStream proto_rng = rng.fork(stream_tag("prototypes"));
    const auto protos = io::random_prototypes(k, c.count("synth_dim"), proto_rng);
    auto make = [&](std::size_t total, const char* tag) {
      io::SynthSpec spec{protos, std::vector<std::size_t>(k, total / k), c.real("synth_flip")};
      for (std::size_t j = 0; j < total % k; ++j) ++spec.counts[j];
      RngStream r = rng.fork(stream_tag(tag));
      return io::synth_patterns(spec, r);
    };
    d.train = make(c.count("synth_train"), "train");
    if (c.count("synth_test") > 0) d.test = make(c.count("synth_test"), "test");
  } else if (kind == "idx") {
    d.train = io::load_idx(c.text("train_images"), c.text("train_labels"));
    if (!c.text("test_images").empty()) d.test = io::load_idx(c.text("test_images"), c.text("test_labels"));
  } else {
    d.train = io::load_csv(c.text("train_csv"), c.flag("csv_label_last"));
    if (!c.text("test_csv").empty()) d.test = io::load_csv(c.text("test_csv"), c.flag("csv_label_last"));
  }
  const std::string bin = c.text("binarize");
  const bool do_bin = bin == "true" || (bin == "auto" && c.text("decoder") == "bernoulli");
  if (do_bin) {
    d.train = io::binarize(d.train, c.real("binarize_threshold"));
    if (d.test) d.test = io::binarize(*d.test, c.real("binarize_threshold"));
  }
  if (d.test) {
    if (d.test->dim() != d.train.dim())
      throw DimensionError("test set has " + std::to_string(d.test->dim()) + " columns, training set " +
                           std::to_string(d.train.dim()));
    if (d.train.has_labels() && d.test->has_labels()) {
      const std::size_t k = std::max(d.train.n_classes, d.test->n_classes);
      d.train.n_classes = d.test->n_classes = k;
    }
  }
  return d;
}

std::vector<std::size_t> select_per_class(std::span<const std::size_t> labels, std::size_t n_classes,
                                          std::optional<std::size_t> per_class, const RngStream& rng) {
  std::vector<std::vector<std::size_t>> by_class(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw InvalidArgument("label out of range at row " + std::to_string(i));
    by_class[labels[i]].push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < n_classes; ++k) {
    const auto& rows = by_class[k];
    const std::size_t want = per_class ? *per_class : rows.size();
    if (want > rows.size())
      throw InvalidArgument("label budget " + std::to_string(want) + " exceeds the " + std::to_string(rows.size()) +
                            " labels available for class " + std::to_string(k));
    RngStream r = rng.fork(k);
    const auto perm = r.permutation(rows.size());
    for (std::size_t j = 0; j < want; ++j) out.push_back(rows[perm[j]]);
  }
  return out;
}

void cmd_pretrain(const RunConfig& c, std::ostream& out) {
  const Clock clock(c.flag("timing"));
  const Data d = load_data(c);
  const vae::VaeConfig vc = c.vae_config(d.train.dim());
  const mixture::MixtureConfig mc = c.mixture_config();
  ensure_out_dir(c);

  mixture::PretrainReport report;
  const vae::VaeModel base = mixture::pretrain_base(vc, mc, d.train.instances, root_rng(c).fork(stream_tag("pretrain")), &report);

  io::MetricsWriter metrics = fresh_metrics(c, "metrics_pretrain.csv");
  const std::string id = run_id("pretrain", c);
  for (std::size_t s = 0; s < report.steps; ++s) {
    io::MetricsRecord r{id, "pretrain"};
    r.sweep_or_epoch = static_cast<std::int64_t>(s);
    r.component_count = 1;
    r.elbo = -report.step_loss[s];
    r.recon_error = -report.step_recon[s];
    r.kl = report.step_kl[s];
    if (s + 1 == report.steps) r.wall_ms = clock.elapsed_ms();
    metrics.emit(r);
  }
  io::Checkpoint ckpt = new_checkpoint(c, "pretrain");
  io::store_vae(ckpt, "base/", base);
  ckpt.meta["pretrain"] = json{{"steps", report.steps}, {"converged", report.converged}};
  io::save_checkpoint(base_checkpoint_path(c), ckpt);
  out << "pretrain: " << report.steps << " steps, final loss " << fmt(report.step_loss.back(), 6)
      << (report.converged ? " (converged)" : "") << "\n"
      << "wrote " << base_checkpoint_path(c) << "\n";
}

void cmd_fit_mixture(const RunConfig& c, const CommandOptions& options, std::ostream& out) {
  const Clock clock(c.flag("timing"));
  const Data d = load_data(c);
  const Tensor& x = d.train.instances;
  const mixture::MixtureConfig mc = c.mixture_config();
  ensure_out_dir(c);
  const std::string ckpt_path = mixture_checkpoint_path(c);
  const std::string metrics_path = out_file(c, "metrics_fit.csv");
  const std::string sweeps_path = out_file(c, "sweeps.csv");

  auto save = [&](const mixture::MixtureState& s) {
    io::Checkpoint ckpt = new_checkpoint(c, "fit-mixture");
    io::store_mixture(ckpt, s);
    io::save_checkpoint(ckpt_path, ckpt);
  };

  mixture::MixtureState state;
  if (options.resume && fs::exists(ckpt_path)) {
    const io::Checkpoint ckpt = io::load_checkpoint(ckpt_path);
    if (ckpt.config != c.echo()) throw ConfigError("resume: configuration differs from the one in " + ckpt_path);
    state = io::load_mixture(ckpt);
    if (state.assignments.size() != x.rows())
      throw DimensionError("resume: checkpoint covers " + std::to_string(state.assignments.size()) + " instances");
    trim_sweep_rows(metrics_path, 2, "sweep", state.progress.sweeps_done);
    trim_sweep_rows(sweeps_path, 0, "", state.progress.sweeps_done);
    out << "resuming after sweep " << state.progress.sweeps_done << "\n";
  } else {
    const vae::VaeModel base = io::load_vae(open_checkpoint(base_checkpoint_path(c)), "base/");
    if (base.config().input_dim != d.train.dim())
      throw DimensionError("base model expects " + std::to_string(base.config().input_dim) +
                           " input columns, dataset has " + std::to_string(d.train.dim()));
    const RngStream root = root_rng(c);
    std::optional<mixture::SeedLabels> seed;
    const std::size_t n_seed = c.count("seed_labels");
    if (n_seed > 0 && d.train.has_labels()) {
      const std::size_t k = d.train.n_classes;
      if (n_seed < k) throw ConfigError("seed_labels must be 0 or at least the number of classes (" + std::to_string(k) + ")");
      if (k > mc.c_max) throw ConfigError("label seeding needs c_max >= number of classes");
      seed.emplace();
      seed->n_classes = k;
      seed->indices = select_per_class(d.train.labels, k, n_seed / k, root.fork(stream_tag("seed_labels")));
      for (std::size_t i : seed->indices) seed->labels.push_back(d.train.labels[i]);
    }
    state = mixture::prepare(mc, base, x, root.fork(stream_tag("mixture")), seed ? &*seed : nullptr);
    fresh_metrics(c, "metrics_fit.csv");
    open_text(sweeps_path) << kSweepLogHeader << "\n";
    save(state);
    out << "initial components: " << state.size() << (seed ? " (label seeded)" : "") << "\n";
  }

  io::MetricsWriter metrics(metrics_path, c.echo());
  std::ofstream sweep_log(sweeps_path, std::ios::app);
  const std::string id = run_id("fit-mixture", c);
  auto on_sweep = [&](const mixture::MixtureState& s, const mixture::SweepStats& st) {
    io::MetricsRecord r{id, "sweep"};
    r.sweep_or_epoch = static_cast<std::int64_t>(s.progress.sweeps_done);
    r.component_count = static_cast<std::int64_t>(s.size());
    r.elbo = st.elbo;
    r.recon_error = -st.recon;
    r.kl = st.kl;
    r.wall_ms = clock.elapsed_ms();
    metrics.emit(r);
    sweep_log << sweep_log_row(s, st) << "\n" << std::flush;
    save(s);
    out << "sweep " << s.progress.sweeps_done << ": C=" << s.size() << " reassigned=" << st.reassignments
        << " elbo=" << fmt(st.elbo, 6) << "\n";
    if (options.halt_after_sweep && s.progress.sweeps_done >= *options.halt_after_sweep) throw Halted{};
  };
  try {
    mixture::run_sweeps(state, x, on_sweep);
  } catch (const Halted&) {
    out << "halted after sweep " << state.progress.sweeps_done << "; continue with --resume\n";
    return;
  }
  out << "final components: " << state.size() << (state.progress.converged ? " (converged)" : "") << "\n"
      << "wrote " << ckpt_path << "\n";
}

void cmd_train_semisup(const RunConfig& c, std::ostream& out) {
  const Clock clock(c.flag("timing"));
  const Data d = load_data(c);
  if (!d.train.has_labels()) throw InvalidArgument("train-semisup needs a labeled training set");
  const io::Dataset& test = d.test && d.test->has_labels() ? *d.test : d.train;
  const mixture::MixtureState mix = load_mixture_for(c, d.train.dim());
  const std::size_t k = d.train.n_classes;
  const moe::MoeConfig mcfg = c.moe_config(d.train.dim(), k);
  mcfg.validate();
  const nn::HiddenBlock* encoder = nullptr;
  if (c.text("moe_trunk") == "encoder" || c.text("baseline_trunk") == "encoder") {
    if (!mix.base) throw InvalidArgument("trunk = encoder needs a mixture checkpoint with its base model");
    if (mix.base->config().hidden_dim != mcfg.hidden_dim)
      throw ConfigError("trunk = encoder needs moe_hidden_dim equal to the base hidden_dim");
    encoder = &mix.base->encoder_hidden();
  }
  const auto budget = c.label_budget();
  const std::size_t trials = c.count("trials");
  ensure_out_dir(c);

  io::MetricsWriter metrics = fresh_metrics(c, "metrics_semisup.csv");
  std::ofstream report = open_text(out_file(c, "semisup_report.csv"));
  report << "arm,trial,labeled,error_rate,log_loss\n";
  io::Checkpoint ckpt = new_checkpoint(c, "train-semisup");
  const std::string id = run_id("train-semisup", c);
  const RngStream root = root_rng(c).fork(stream_tag("semisup"));
  std::vector<double> moe_err, base_err;
  std::size_t labeled_count = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const RngStream tr = root.fork(t);
    const auto idx = select_per_class(d.train.labels, k, budget, tr.fork(stream_tag("labels")));
    const io::Dataset labeled = d.train.subset(idx);
    labeled_count = labeled.size();

    moe::MoeModel model = moe::make_model(mcfg, mix.size(), tr.fork(stream_tag("moe")));
    if (c.text("moe_trunk") == "encoder") model.init_trunk_from(*encoder);
    moe::train(model, mix, labeled, tr.fork(stream_tag("moe")));
    const moe::Evaluation em = moe::evaluate(model, mix, test, tr.fork(stream_tag("eval")));

    const moe::MoeModel base = moe::baseline_train(mcfg, labeled.instances, labeled.labels,
                                                   tr.fork(stream_tag("baseline")),
                                                   c.text("baseline_trunk") == "encoder" ? encoder : nullptr);
    const moe::Evaluation eb = moe::evaluate_probs(base.expert_probs(test.instances, 0), test.labels, k);

    moe_err.push_back(em.error_rate);
    base_err.push_back(eb.error_rate);
    for (const auto& [arm, e, cc] : {std::tuple{"moe", em, mix.size()}, std::tuple{"baseline", eb, std::size_t{1}}}) {
      io::MetricsRecord r{id, arm};
      r.sweep_or_epoch = static_cast<std::int64_t>(t);
      r.component_count = static_cast<std::int64_t>(cc);
      r.error_rate = e.error_rate;
      r.wall_ms = clock.elapsed_ms();
      metrics.emit(r);
      report << arm << "," << t << "," << labeled.size() << "," << fmt(e.error_rate) << "," << fmt(e.log_loss) << "\n";
    }
    io::store_moe(ckpt, "moe/trial" + std::to_string(t) + "/", model);
    io::store_moe(ckpt, "baseline/trial" + std::to_string(t) + "/", base);
  }
  io::save_checkpoint(out_file(c, "semisup.ckpt"), ckpt);
  const json summary{
      {"trials", trials},
      {"labeled_per_trial", labeled_count},
      {"component_count", mix.size()},
      {"moe", {{"error_rates", moe_err}, {"mean", mean_of(moe_err)}, {"std", std_of(moe_err)}}},
      {"baseline", {{"error_rates", base_err}, {"mean", mean_of(base_err)}, {"std", std_of(base_err)}}}};
  open_text(out_file(c, "semisup_summary.json")) << summary.dump(2) << "\n";
  out << "labeled instances per trial: " << labeled_count << ", components: " << mix.size() << "\n"
      << "moe error      " << fmt(100 * mean_of(moe_err), 4) << " +- " << fmt(100 * std_of(moe_err), 4) << " %\n"
      << "baseline error " << fmt(100 * mean_of(base_err), 4) << " +- " << fmt(100 * std_of(base_err), 4) << " %\n";
}

void cmd_reconstruct(const RunConfig& c, std::ostream& out) {
  const Clock clock(c.flag("timing"));
  const Data d = load_data(c);
  const io::Dataset input = limit_rows(eval_split(c, d), c.count("rows"));
  const mixture::MixtureState mix = load_mixture_for(c, input.dim());
  ensure_out_dir(c);
  const Tensor xhat = mixture::expected_reconstruction(mix, input.instances, root_rng(c).fork(stream_tag("reconstruct")),
                                                       c.count("recon_samples"));
  const std::vector<double> err = l2_errors(input.instances, xhat);
  std::ofstream f = open_text(out_file(c, "reconstruction.csv"));
  f << "instance_id,l2_error";
  for (std::size_t j = 0; j < xhat.cols(); ++j) f << ",xhat_" << j;
  f << "\n";
  for (std::size_t i = 0; i < xhat.rows(); ++i) {
    f << i << "," << fmt(err[i], 17);
    for (std::size_t j = 0; j < xhat.cols(); ++j) f << "," << fmt(xhat(i, j), 17);
    f << "\n";
  }
  io::MetricsWriter metrics = fresh_metrics(c, "metrics_reconstruct.csv");
  io::MetricsRecord r{run_id("reconstruct", c), "reconstruct"};
  r.component_count = static_cast<std::int64_t>(mix.size());
  r.recon_error = mean_of(err);
  r.wall_ms = clock.elapsed_ms();
  metrics.emit(r);
  out << "mean reconstruction error " << fmt(mean_of(err), 6) << " over " << err.size() << " rows (C=" << mix.size()
      << ")\n";
}

void cmd_export_latents(const RunConfig& c, std::ostream& out) {
  const Data d = load_data(c);
  const io::Dataset input = limit_rows(eval_split(c, d), c.count("rows"));
  const mixture::MixtureState mix = load_mixture_for(c, input.dim());
  ensure_out_dir(c);
  const auto rows = mixture::export_latent_stats(mix, input.instances, root_rng(c).fork(stream_tag("export")));
  const std::size_t k = mix.components.front().model.config().latent_dim;
  std::ofstream f = open_text(out_file(c, "latents.csv"));
  f << "instance_id,component_id";
  for (std::size_t j = 0; j < k; ++j) f << ",mu_" << j;
  for (std::size_t j = 0; j < k; ++j) f << ",sigma_" << j;
  f << ",responsibility\n";
  for (const auto& row : rows) {
    f << row.instance << "," << row.component;
    for (double v : row.mu) f << "," << fmt(v, 17);
    for (double v : row.sigma) f << "," << fmt(v, 17);
    f << "," << fmt(row.responsibility, 17) << "\n";
  }
  out << "wrote " << rows.size() << " rows to " << out_file(c, "latents.csv") << "\n";
}

void cmd_eval(const RunConfig& c, std::ostream& out) {
  const Clock clock(c.flag("timing"));
  const Data d = load_data(c);
  const io::Dataset input = limit_rows(eval_split(c, d), c.count("rows"));
  const mixture::MixtureState mix = load_mixture_for(c, input.dim());
  if (!mix.base) throw InvalidArgument("eval needs a mixture checkpoint with its base model");
  ensure_out_dir(c);
  const RngStream root = root_rng(c).fork(stream_tag("eval"));
  const mixture::MixtureState single =
      mixture::initialize(mix.config, *mix.base, mix.assignments.size(), 1, root.fork(stream_tag("single")));

  const std::size_t samples = c.count("recon_samples");
  const RngStream rec = root.fork(stream_tag("reconstruct"));
  const double mix_err = mean_of(l2_errors(input.instances, mixture::expected_reconstruction(mix, input.instances, rec, samples)));
  const double base_err = mean_of(l2_errors(input.instances, mixture::expected_reconstruction(single, input.instances, rec, samples)));

  json result{{"component_count", mix.size()},
              {"rows", input.size()},
              {"mixture_recon_error", mix_err},
              {"base_recon_error", base_err}};
  std::optional<double> mix_acc, base_acc;
  const io::Dataset& probe_test = d.test && d.test->has_labels() ? *d.test : d.train;
  if (d.train.has_labels() && probe_test.has_labels()) {
    const auto idx = select_per_class(d.train.labels, d.train.n_classes, c.label_budget(), root.fork(stream_tag("labels")));
    const io::Dataset labeled = d.train.subset(idx);
    const RngStream probe = root.fork(stream_tag("probe"));
    mix_acc = moe::linear_probe(mix, labeled, probe_test, probe);
    base_acc = moe::linear_probe(single, labeled, probe_test, probe);
    result["probe_labels"] = labeled.size();
    result["mixture_probe_accuracy"] = *mix_acc;
    result["base_probe_accuracy"] = *base_acc;
  }
  open_text(out_file(c, "eval.json")) << result.dump(2) << "\n";

  io::MetricsWriter metrics = fresh_metrics(c, "metrics_eval.csv");
  const std::string id = run_id("eval", c);
  io::MetricsRecord rm{id, "eval-mixture"};
  rm.component_count = static_cast<std::int64_t>(mix.size());
  rm.recon_error = mix_err;
  if (mix_acc) rm.error_rate = 1.0 - *mix_acc;
  metrics.emit(rm);
  io::MetricsRecord rb{id, "eval-base"};
  rb.component_count = 1;
  rb.recon_error = base_err;
  if (base_acc) rb.error_rate = 1.0 - *base_acc;
  rb.wall_ms = clock.elapsed_ms();
  metrics.emit(rb);

  out << "components " << mix.size() << "\n"
      << "reconstruction error  mixture " << fmt(mix_err, 6) << "  base " << fmt(base_err, 6) << "\n";
  if (mix_acc)
    out << "linear probe accuracy mixture " << fmt(*mix_acc, 6) << "  base " << fmt(*base_acc, 6) << "\n";
}

}  // namespace imvae::cli
