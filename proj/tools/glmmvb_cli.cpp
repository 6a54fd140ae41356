// glmmvb: batch command-line front end.
//
//   glmmvb simulate  --kind logistic --m 1000 --seed 7 --out data.csv
//   glmmvb fit       --data data.csv --family bernoulli --out fit.json
//   glmmvb recombine --out combined.json piece0.json piece1.json ...
//   glmmvb select    --data data.csv --fixed-pool x2,x3 --random-pool z2 --csv lpds.csv
//   glmmvb mcmc      --data data.csv --family poisson --out chain.csv
//   glmmvb compare   --fit fit.json --chain chain.csv
//   glmmvb density   --fit fit.json --out grids.json
//
// Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "glmmvb/glmmvb.hpp"

namespace {

using glmmvb::io::Json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void emit(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
  } else {
    glmmvb::io::write_file(path, content);
  }
}

Json grids_json(const std::vector<glmmvb::DensityGrid>& grids) {
  Json out = Json::array();
  for (const auto& g : grids) {
    out.push_back({{"parameter", g.parameter}, {"x", g.x}, {"density", g.density}});
  }
  return out;
}

std::vector<std::string> beta_names(glmmvb::Index p) {
  std::vector<std::string> names;
  for (glmmvb::Index k = 0; k < p; ++k) {
    names.push_back("beta" + std::to_string(k + 1));
  }
  return names;
}

/// Column indices of `names` (comma separated) within `available`.
std::vector<glmmvb::Index> resolve_columns(const std::string& list, const std::vector<std::string>& available,
                                           const char* flag) {
  std::vector<glmmvb::Index> out;
  if (list.empty()) {
    return out;
  }
  for (const auto name : glmmvb::io::detail::split(list, ',')) {
    const auto it = std::find(available.begin(), available.end(), name);
    if (it == available.end()) {
      throw UsageError(std::string(flag) + ": unknown column '" + std::string(name) + "'");
    }
    out.push_back(static_cast<glmmvb::Index>(it - available.begin()));
  }
  return out;
}

struct ModelFlags {
  std::string data;
  std::string family = "bernoulli";
  std::string link;
  double tau = glmmvb::Prior::kDefaultTau;

  void add(CLI::App* app) {
    app->add_option("--data", data, "dataset CSV")->required();
    app->add_option("--family", family, "bernoulli | poisson")->capture_default_str();
    app->add_option("--link", link, "link function (canonical only: logit | log)");
    app->add_option("--tau", tau, "prior scale: beta ~ N(0, tau I), Q ~ W(u + 1, tau I)")->capture_default_str();
  }

  glmmvb::Dataset load() const {
    return glmmvb::io::read_dataset_csv(data, glmmvb::parse_family(family, link));
  }
};

struct FitFlags {
  std::size_t piece_size = glmmvb::kDefaultPieceSize;
  glmmvb::FitConfig config;
  unsigned jobs = glmmvb::default_jobs();

  void add(CLI::App* app) {
    app->add_option("--pieces-size", piece_size, "target subjects per piece")->capture_default_str();
    app->add_option("--inner-N", config.inner_iterations, "fixed-form iterations per outer step (even)")
        ->capture_default_str();
    app->add_option("--epsilon", config.epsilon, "stopping threshold")->capture_default_str();
    app->add_option("--max-outer", config.max_outer, "maximum outer iterations")->capture_default_str();
    app->add_option("--seed", config.seed, "random seed")->capture_default_str();
    app->add_option("--jobs", jobs, "worker threads")->capture_default_str();
  }
};

int run_simulate(const std::string& kind, std::size_t m, std::uint64_t seed, std::size_t n_i, double sigma2,
                 const std::string& out, const std::string& sidecar) {
  auto design = glmmvb::SimDesign::defaults(glmmvb::parse_sim_kind(kind), m, seed);
  if (n_i > 0) {
    design.n_i = n_i;
  }
  if (sigma2 > 0.0) {
    design.sigma2 = sigma2;
  }
  emit(out, glmmvb::io::dataset_csv(glmmvb::generate(design)));
  const std::string side = !sidecar.empty() ? sidecar : (out.empty() || out == "-" ? "" : out + ".json");
  if (!side.empty()) {
    glmmvb::io::write_json(side, glmmvb::io::simulation_sidecar(design));
  }
  return 0;
}

int run_fit(const ModelFlags& mf, const FitFlags& ff, const std::string& out, const std::string& partition_out,
            const std::string& pieces_dir) {
  const auto data = mf.load();
  const auto model = glmmvb::GlmmModel::from_dataset(data, mf.tau);
  const auto ids = glmmvb::subject_ids(model);
  const auto partition = glmmvb::make_partition(ids, ff.piece_size, ff.config.seed);
  if (!partition_out.empty()) {
    glmmvb::io::write_file(partition_out, glmmvb::io::partition_csv(partition));
  }
  auto fits = glmmvb::fit_pieces(model, partition, ff.config, ff.jobs);
  if (!pieces_dir.empty()) {
    for (std::size_t j = 0; j < fits.size(); ++j) {
      const auto sub = model.subset(glmmvb::piece_subjects(model, partition, j));
      glmmvb::io::write_json(pieces_dir + "/piece" + std::to_string(j) + ".json",
                             glmmvb::io::to_json(glmmvb::io::fit_document(fits[j], sub)));
    }
  }
  Json doc;
  if (fits.size() == 1) {
    doc = glmmvb::io::to_json(glmmvb::io::fit_document(fits[0], model));
  } else {
    const auto combined = glmmvb::recombine(std::move(fits), model);
    doc = glmmvb::io::to_json(glmmvb::io::fit_document(combined, model, ff.config.seed));
  }
  emit(out, doc.dump(2) + "\n");
  return 0;
}

int run_recombine(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<glmmvb::io::FitDocument> docs;
  for (const auto& path : inputs) {
    docs.push_back(glmmvb::io::read_fit(path));
  }
  emit(out, glmmvb::io::to_json(glmmvb::io::recombine_documents(docs)).dump(2) + "\n");
  return 0;
}

int run_select(const ModelFlags& mf, const FitFlags& ff, const std::string& fixed_pool,
               const std::string& random_pool, const std::string& csv_out, const std::string& json_out) {
  const auto data = mf.load();
  const auto fixed = resolve_columns(fixed_pool, data.x_names, "--fixed-pool");
  const auto random = resolve_columns(random_pool, data.z_names, "--random-pool");
  const auto candidates = glmmvb::enumerate_candidates(fixed, random, data.family);
  std::vector<std::string> ids;
  for (const auto& s : data.subjects) {
    ids.push_back(s.id);
  }
  const auto partition = glmmvb::make_partition(ids, ff.piece_size, ff.config.seed);
  const auto report =
      glmmvb::cross_validated_lpds(candidates, data, partition, ff.config, {ff.jobs, mf.tau});
  if (!csv_out.empty()) {
    glmmvb::io::write_file(csv_out, glmmvb::io::lpds_csv(report, data));
  }
  if (!json_out.empty()) {
    glmmvb::io::write_json(json_out, glmmvb::io::lpds_json(report, data, partition));
  }
  std::printf("%-10s %-24s %-24s %14s\n", "candidate", "fixed effects", "random effects", "LPDS");
  for (std::size_t c = 0; c < report.per_model.size(); ++c) {
    const auto& e = report.per_model[c];
    std::printf("%-10zu %-24s %-24s %14.4f%s\n", c,
                glmmvb::io::column_list(e.candidate.fixed_columns, data.x_names).c_str(),
                glmmvb::io::column_list(e.candidate.random_columns, data.z_names).c_str(), e.lpds,
                c == report.best_index ? "  *" : "");
  }
  return 0;
}

int run_mcmc(const ModelFlags& mf, const glmmvb::ChainConfig& config, const std::string& out,
             const std::string& summary) {
  const auto model = glmmvb::GlmmModel::from_dataset(mf.load(), mf.tau);
  const auto chain = glmmvb::run_chain(model, config);
  emit(out, glmmvb::io::chain_csv(chain));
  if (!summary.empty()) {
    glmmvb::io::write_json(summary, glmmvb::io::chain_summary(chain, config));
  }
  if (!chain.warning.empty()) {
    std::cerr << "glmmvb mcmc: warning: " << chain.warning << "\n";
  }
  return 0;
}

struct Moments {
  double mean;
  double sd;
};

Moments sample_moments(const glmmvb::Vector& x) {
  const double n = static_cast<double>(x.size());
  const double mean = x.mean();
  return {mean, std::sqrt((x.array() - mean).square().sum() / (n - 1.0))};
}

int run_compare(const std::string& fit_path, const std::string& chain_path, const std::string& out) {
  const auto fit = glmmvb::io::read_fit(fit_path);
  const auto chain = glmmvb::io::parse_chain_csv(glmmvb::io::read_file(chain_path));
  const auto names = beta_names(fit.p);
  const auto q_len = glmmvb::theta_q_length(fit.u);
  if (static_cast<glmmvb::Index>(chain.names.size()) != fit.p + q_len) {
    throw glmmvb::DimensionError("compare: chain columns do not match the fit's (p, u)");
  }

  Json rows = Json::array();
  std::vector<glmmvb::DensityGrid> vb_grids;
  std::vector<glmmvb::DensityGrid> mcmc_grids;
  std::printf("%-10s %12s %12s %12s %12s %12s %12s\n", "parameter", "VB mean", "MCMC mean", "|d mean|", "VB sd",
              "MCMC sd", "|d sd|");
  auto add_row = [&](const std::string& name, Moments vb, const glmmvb::Vector& draws) {
    const Moments mc = sample_moments(draws);
    std::printf("%-10s %12.5f %12.5f %12.5f %12.5f %12.5f %12.5f\n", name.c_str(), vb.mean, mc.mean,
                std::abs(vb.mean - mc.mean), vb.sd, mc.sd, std::abs(vb.sd - mc.sd));
    rows.push_back({{"parameter", name},
                    {"vb_mean", vb.mean},
                    {"mcmc_mean", mc.mean},
                    {"abs_delta_mean", std::abs(vb.mean - mc.mean)},
                    {"vb_sd", vb.sd},
                    {"mcmc_sd", mc.sd},
                    {"abs_delta_sd", std::abs(vb.sd - mc.sd)}});
    mcmc_grids.push_back(glmmvb::histogram_grid(name, draws));
  };
  for (glmmvb::Index k = 0; k < fit.p; ++k) {
    const double sd = std::sqrt(fit.beta.covariance()(k, k));
    add_row(names[static_cast<std::size_t>(k)], {fit.beta.mean()(k), sd}, chain.draws.col(k));
    vb_grids.push_back(glmmvb::gaussian_grid(names[static_cast<std::size_t>(k)], fit.beta.mean()(k), sd));
  }
  if (fit.u == 1) {
    // sigma^2 = 1/Q = exp(-theta_Q) on the chain side.
    const glmmvb::Vector sigma2 = (-chain.draws.col(fit.p).array()).exp().matrix();
    const double a = 0.5 * fit.q.nu();
    const double b = 0.5 / fit.q.scale()(0, 0);
    const double mean = b / (a - 1.0);
    add_row("sigma2", {mean, a > 2.0 ? mean / std::sqrt(a - 2.0) : std::nan("")}, sigma2);
    vb_grids.push_back(glmmvb::sigma2_grid(fit.q));
  }
  if (!out.empty()) {
    glmmvb::io::write_json(out, Json{{"parameters", std::move(rows)},
                                     {"vb_grids", grids_json(vb_grids)},
                                     {"mcmc_grids", grids_json(mcmc_grids)}});
  }
  return 0;
}

int run_density(const std::string& fit_path, const std::string& out) {
  const auto fit = glmmvb::io::read_fit(fit_path);
  auto grids = glmmvb::gaussian_marginal_grids(fit.beta, beta_names(fit.p));
  if (fit.u == 1) {
    grids.push_back(glmmvb::sigma2_grid(fit.q));
  }
  emit(out, Json{{"grids", grids_json(grids)}}.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Bayes for generalized linear mixed models"};
  app.require_subcommand(1);
  std::function<int()> action;

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset CSV");
  std::string sim_kind = "logistic";
  std::size_t sim_m = 1000;
  std::size_t sim_ni = 0;
  double sim_sigma2 = 0.0;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  std::string sim_sidecar;
  sim->add_option("--kind", sim_kind, "logistic | logistic-select | poisson")->capture_default_str();
  sim->add_option("--m", sim_m, "number of subjects")->capture_default_str();
  sim->add_option("--n-i", sim_ni, "observations per subject (default: design value)");
  sim->add_option("--sigma2", sim_sigma2, "random intercept variance (default: design value)");
  sim->add_option("--seed", sim_seed, "random seed")->capture_default_str();
  sim->add_option("--out", sim_out, "output CSV (default: stdout)");
  sim->add_option("--sidecar", sim_sidecar, "design JSON (default: <out>.json)");
  sim->callback([&] {
    action = [&] { return run_simulate(sim_kind, sim_m, sim_seed, sim_ni, sim_sigma2, sim_out, sim_sidecar); };
  });

  // fit
  auto* fit = app.add_subcommand("fit", "fit by divide-and-recombine hybrid VB");
  ModelFlags fit_model;
  FitFlags fit_flags;
  std::string fit_out;
  std::string fit_partition;
  std::string fit_pieces_dir;
  fit_model.add(fit);
  fit_flags.add(fit);
  fit->add_option("--out", fit_out, "fit JSON (default: stdout)");
  fit->add_option("--partition-out", fit_partition, "write the subject-to-piece CSV");
  fit->add_option("--pieces-dir", fit_pieces_dir, "write each piece's fit JSON into this directory")
      ->check(CLI::ExistingDirectory);
  fit->callback([&] { action = [&] { return run_fit(fit_model, fit_flags, fit_out, fit_partition, fit_pieces_dir); }; });

  // recombine
  auto* rec = app.add_subcommand("recombine", "combine piece fit JSONs");
  std::vector<std::string> rec_inputs;
  std::string rec_out;
  rec->add_option("fits", rec_inputs, "piece fit JSON files")->required()->check(CLI::ExistingFile);
  rec->add_option("--out", rec_out, "combined JSON (default: stdout)");
  rec->callback([&] { action = [&] { return run_recombine(rec_inputs, rec_out); }; });

  // select
  auto* sel = app.add_subcommand("select", "cross-validated LPDS over candidate models");
  ModelFlags sel_model;
  FitFlags sel_flags;
  std::string sel_fixed;
  std::string sel_random;
  std::string sel_csv;
  std::string sel_json;
  sel_model.add(sel);
  sel_flags.add(sel);
  sel->add_option("--fixed-pool", sel_fixed, "optional fixed-effect columns, e.g. x2,x3");
  sel->add_option("--random-pool", sel_random, "optional random-effect columns, e.g. z2");
  sel->add_option("--csv", sel_csv, "LPDS CSV");
  sel->add_option("--json", sel_json, "full LPDS report JSON");
  sel->callback([&] {
    action = [&] { return run_select(sel_model, sel_flags, sel_fixed, sel_random, sel_csv, sel_json); };
  });

  // mcmc
  auto* mc = app.add_subcommand("mcmc", "pseudo-marginal adaptive Metropolis reference chain");
  ModelFlags mc_model;
  glmmvb::ChainConfig mc_config;
  std::string mc_out;
  std::string mc_summary;
  mc_model.add(mc);
  mc->add_option("--n-iter", mc_config.n_iter, "post burn-in iterations")->capture_default_str();
  mc->add_option("--burnin", mc_config.burnin, "burn-in iterations")->capture_default_str();
  mc->add_option("--is-samples", mc_config.is_samples, "importance samples per subject")->capture_default_str();
  mc->add_option("--seed", mc_config.seed, "random seed")->capture_default_str();
  mc->add_option("--out", mc_out, "chain CSV (default: stdout)");
  mc->add_option("--summary", mc_summary, "summary JSON");
  mc->callback([&] { action = [&] { return run_mcmc(mc_model, mc_config, mc_out, mc_summary); }; });

  // compare
  auto* cmp = app.add_subcommand("compare", "VB fit versus MCMC chain");
  std::string cmp_fit;
  std::string cmp_chain;
  std::string cmp_out;
  cmp->add_option("--fit", cmp_fit, "fit JSON")->required()->check(CLI::ExistingFile);
  cmp->add_option("--chain", cmp_chain, "chain CSV")->required()->check(CLI::ExistingFile);
  cmp->add_option("--out", cmp_out, "comparison JSON with density grids");
  cmp->callback([&] { action = [&] { return run_compare(cmp_fit, cmp_chain, cmp_out); }; });

  // density
  auto* den = app.add_subcommand("density", "density grids of a fit's marginals");
  std::string den_fit;
  std::string den_out;
  den->add_option("--fit", den_fit, "fit JSON")->required()->check(CLI::ExistingFile);
  den->add_option("--out", den_out, "grid JSON (default: stdout)");
  den->callback([&] { action = [&] { return run_density(den_fit, den_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return action();
  } catch (const UsageError& e) {
    std::cerr << "glmmvb " << name << ": " << e.what() << "\n";
    return 2;
  } catch (const glmmvb::ConfigError& e) {
    std::cerr << "glmmvb " << name << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "glmmvb " << name << ": " << e.what() << "\n";
    return 1;
  }
}
