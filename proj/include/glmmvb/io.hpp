#pragma once

// File formats: the dataset CSV, fit / combined-fit JSON, partition CSV,
// LPDS report CSV + JSON, chain CSV + summary JSON and the simulation sidecar.
// Numbers are written in shortest round-trip form, so every value parses back
// to the identical double.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "glmmvb/dnr.hpp"
#include "glmmvb/errors.hpp"
#include "glmmvb/expfam.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/mcmcref.hpp"
#include "glmmvb/mfvb.hpp"
#include "glmmvb/modelsel.hpp"
#include "glmmvb/simulate.hpp"

namespace glmmvb::io {

using Json = nlohmann::ordered_json;

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view context) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InvalidInputError(std::string(context) + ": cannot parse '" + std::string(s) + "' as a number");
  }
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InvalidInputError("cannot open '" + path + "' for reading");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InvalidInputError("cannot open '" + path + "' for writing");
  }
  out << content;
  if (!out) {
    throw InvalidInputError("write to '" + path + "' failed");
  }
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

/// Non-empty lines with any trailing '\r' removed.
inline std::vector<std::string_view> lines(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') {
      line.remove_suffix(1);
    }
    if (!line.empty()) {
      out.push_back(line);
    }
  }
  return out;
}

inline Json vector_json(const Vector& v) {
  Json out = Json::array();
  for (Index k = 0; k < v.size(); ++k) {
    out.push_back(v(k));
  }
  return out;
}

/// Row-major nested arrays.
inline Json matrix_json(const Matrix& a) {
  Json out = Json::array();
  for (Index r = 0; r < a.rows(); ++r) {
    Json row = Json::array();
    for (Index c = 0; c < a.cols(); ++c) {
      row.push_back(a(r, c));
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline Vector json_vector(const Json& j, Index expected, const char* field) {
  if (!j.is_array() || (expected >= 0 && static_cast<Index>(j.size()) != expected)) {
    throw InvalidInputError(std::string("fit JSON: field '") + field + "' has the wrong shape");
  }
  Vector v(static_cast<Index>(j.size()));
  for (Index k = 0; k < v.size(); ++k) {
    v(k) = j[static_cast<std::size_t>(k)].get<double>();
  }
  return v;
}

inline Matrix json_matrix(const Json& j, Index rows, Index cols, const char* field) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows) {
    throw InvalidInputError(std::string("fit JSON: field '") + field + "' has the wrong shape");
  }
  Matrix a(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    a.row(r) = json_vector(j[static_cast<std::size_t>(r)], cols, field).transpose();
  }
  return a;
}

}  // namespace detail

// ---------------------------------------------------------------- dataset CSV

/// Header `subject_id,y,x1..xp,z1..zu[,offset]`; x columns are the ones whose
/// name starts with 'x', z columns with 'z', in that order. Rows of a subject
/// must be contiguous.
inline Dataset parse_dataset_csv(std::string_view text, Family family) {
  const auto rows = detail::lines(text);
  if (rows.empty()) {
    throw EmptyDataError("dataset CSV: empty input");
  }
  const auto header = detail::split(rows[0], ',');
  if (header.size() < 4 || header[0] != "subject_id" || header[1] != "y") {
    throw InvalidInputError("dataset CSV: header must start with subject_id,y");
  }
  Dataset data;
  data.family = family;
  std::size_t col = 2;
  while (col < header.size() && !header[col].empty() && header[col][0] == 'x') {
    data.x_names.emplace_back(header[col++]);
  }
  while (col < header.size() && !header[col].empty() && header[col][0] == 'z') {
    data.z_names.emplace_back(header[col++]);
  }
  if (col < header.size() && header[col] == "offset") {
    data.has_offset = true;
    ++col;
  }
  if (col != header.size()) {
    throw InvalidInputError("dataset CSV: unexpected column '" + std::string(header[col]) + "'");
  }
  if (data.x_names.empty() || data.z_names.empty()) {
    throw InvalidInputError("dataset CSV: need at least one x and one z column");
  }
  const Index p = data.p();
  const Index u = data.u();

  struct Row {
    double y;
    std::vector<double> x, z;
    double offset;
  };
  std::vector<std::pair<std::string, std::vector<Row>>> groups;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto fields = detail::split(rows[r], ',');
    const std::string where = "dataset CSV line " + std::to_string(r + 1);
    if (fields.size() != header.size()) {
      throw InvalidInputError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                              std::to_string(fields.size()));
    }
    const std::string id(fields[0]);
    if (id.empty()) {
      throw InvalidInputError(where + ": empty subject_id");
    }
    if (groups.empty() || groups.back().first != id) {
      if (seen.contains(id)) {
        throw InvalidInputError(where + ": rows of subject '" + id + "' are not contiguous");
      }
      seen.emplace(id, groups.size());
      groups.push_back({id, {}});
    }
    Row row;
    row.y = parse_double(fields[1], where);
    for (Index k = 0; k < p; ++k) {
      row.x.push_back(parse_double(fields[static_cast<std::size_t>(2 + k)], where));
    }
    for (Index k = 0; k < u; ++k) {
      row.z.push_back(parse_double(fields[static_cast<std::size_t>(2 + p + k)], where));
    }
    row.offset = data.has_offset ? parse_double(fields.back(), where) : 0.0;
    groups.back().second.push_back(std::move(row));
  }
  if (groups.empty()) {
    throw EmptyDataError("dataset CSV: no data rows");
  }
  data.subjects.reserve(groups.size());
  for (auto& [id, group] : groups) {
    const Index n = static_cast<Index>(group.size());
    Subject s{id, Vector(n), Matrix(n, p), Matrix(n, u), Vector(n)};
    for (Index j = 0; j < n; ++j) {
      const Row& row = group[static_cast<std::size_t>(j)];
      s.y(j) = row.y;
      for (Index k = 0; k < p; ++k) {
        s.X(j, k) = row.x[static_cast<std::size_t>(k)];
      }
      for (Index k = 0; k < u; ++k) {
        s.Z(j, k) = row.z[static_cast<std::size_t>(k)];
      }
      s.offset(j) = row.offset;
    }
    data.subjects.push_back(std::move(s));
  }
  return data;
}

inline Dataset read_dataset_csv(const std::string& path, Family family) {
  return parse_dataset_csv(read_file(path), family);
}

inline std::string dataset_csv(const Dataset& data) {
  std::string out = "subject_id,y";
  for (const auto& n : data.x_names) {
    out += "," + n;
  }
  for (const auto& n : data.z_names) {
    out += "," + n;
  }
  if (data.has_offset) {
    out += ",offset";
  }
  out += '\n';
  for (const auto& s : data.subjects) {
    for (Index j = 0; j < s.n(); ++j) {
      out += s.id;
      out += ',' + format_double(s.y(j));
      for (Index k = 0; k < s.X.cols(); ++k) {
        out += ',' + format_double(s.X(j, k));
      }
      for (Index k = 0; k < s.Z.cols(); ++k) {
        out += ',' + format_double(s.Z(j, k));
      }
      if (data.has_offset) {
        out += ',' + format_double(s.offset(j));
      }
      out += '\n';
    }
  }
  return out;
}

inline Json simulation_sidecar(const SimDesign& design) {
  return Json{{"kind", std::string(to_string(design.kind))},
              {"m", design.m},
              {"n_i", design.n_i},
              {"beta", detail::vector_json(design.beta)},
              {"sigma2", design.sigma2},
              {"seed", design.seed},
              {"rng", "philox4x32-10"}};
}

// ---------------------------------------------------------------- fit JSON

struct PieceRecord {
  std::size_t piece = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  bool converged = false;
  int iterations_used = 0;
};

/// Everything a serialized (piece or combined) fit carries.
struct FitDocument {
  Family family = Family::Bernoulli;
  Index p = 0;
  Index u = 0;
  std::size_t m = 0;
  GaussianFactor beta;
  WishartFactor q;
  std::vector<SubjectPosterior> per_subject;
  bool converged = false;
  int iterations_used = 0;
  std::uint64_t seed = 0;
  Prior prior;
  bool combined = false;
  std::vector<PieceRecord> pieces;
};

inline FitDocument fit_document(const VariationalFit& fit, const GlmmModel& model) {
  return FitDocument{model.family(), model.p(),      model.u(),           model.m(),
                     fit.beta_marginal, fit.q_Q,     fit.per_subject,     fit.converged,
                     fit.iterations_used, fit.seed,  model.prior(),       false,
                     {}};
}

/// Combined posterior over all pieces: per-subject posteriors are concatenated
/// in piece order; `converged` holds when every piece converged.
inline FitDocument fit_document(const CombinedPosterior& combined, const GlmmModel& model, std::uint64_t seed) {
  FitDocument doc{model.family(), model.p(), model.u(), model.m(), combined.beta, combined.Q, {}, true, 0, seed,
                  model.prior(),  true,      {}};
  for (std::size_t j = 0; j < combined.pieces.size(); ++j) {
    const auto& f = combined.pieces[j];
    doc.per_subject.insert(doc.per_subject.end(), f.per_subject.begin(), f.per_subject.end());
    doc.converged = doc.converged && f.converged;
    doc.iterations_used = std::max(doc.iterations_used, f.iterations_used);
    doc.pieces.push_back({j, f.per_subject.size(), f.seed, f.converged, f.iterations_used});
  }
  return doc;
}

inline Json to_json(const FitDocument& doc) {
  Json per_subject = Json::array();
  for (const auto& s : doc.per_subject) {
    per_subject.push_back(
        {{"subject_id", s.id}, {"mu_b", detail::vector_json(s.mean)}, {"sigma_b", detail::matrix_json(s.cov)}});
  }
  Json j{{"family", std::string(to_string(doc.family))},
         {"p", doc.p},
         {"u", doc.u},
         {"m", doc.m},
         {"mu_beta", detail::vector_json(doc.beta.mean())},
         {"sigma_beta", detail::matrix_json(doc.beta.covariance())},
         {"nu_q", doc.q.nu()},
         {"S_q", detail::matrix_json(doc.q.scale())},
         {"per_subject", std::move(per_subject)},
         {"converged", doc.converged},
         {"iterations_used", doc.iterations_used},
         {"seed", doc.seed},
         {"stopping_rule", kStoppingRule},
         {"prior",
          {{"mu_beta", detail::vector_json(doc.prior.mu_beta)},
           {"sigma_beta", detail::matrix_json(doc.prior.sigma_beta)},
           {"nu", doc.prior.nu},
           {"S", detail::matrix_json(doc.prior.S)}}}};
  if (doc.combined) {
    j["combined"] = true;
    Json pieces = Json::array();
    for (const auto& pr : doc.pieces) {
      pieces.push_back({{"piece", pr.piece},
                        {"m", pr.m},
                        {"seed", pr.seed},
                        {"converged", pr.converged},
                        {"iterations_used", pr.iterations_used}});
    }
    j["pieces"] = std::move(pieces);
  }
  return j;
}

inline FitDocument fit_from_json(const Json& j) {
  try {
    const Family family = parse_family(j.at("family").get<std::string>());
    const auto p = j.at("p").get<Index>();
    const auto u = j.at("u").get<Index>();
    GaussianFactor beta(detail::json_vector(j.at("mu_beta"), p, "mu_beta"),
                        detail::json_matrix(j.at("sigma_beta"), p, p, "sigma_beta"));
    WishartFactor q(j.at("nu_q").get<double>(), detail::json_matrix(j.at("S_q"), u, u, "S_q"));
    const auto& pr = j.at("prior");
    Prior prior{detail::json_vector(pr.at("mu_beta"), p, "prior.mu_beta"),
                detail::json_matrix(pr.at("sigma_beta"), p, p, "prior.sigma_beta"), pr.at("nu").get<double>(),
                detail::json_matrix(pr.at("S"), u, u, "prior.S")};
    FitDocument doc{family,
                    p,
                    u,
                    j.at("m").get<std::size_t>(),
                    std::move(beta),
                    std::move(q),
                    {},
                    j.at("converged").get<bool>(),
                    j.at("iterations_used").get<int>(),
                    j.at("seed").get<std::uint64_t>(),
                    std::move(prior),
                    j.value("combined", false),
                    {}};
    for (const auto& s : j.at("per_subject")) {
      doc.per_subject.push_back({s.at("subject_id").get<std::string>(), detail::json_vector(s.at("mu_b"), u, "mu_b"),
                                 detail::json_matrix(s.at("sigma_b"), u, u, "sigma_b"), Matrix()});
    }
    if (j.contains("pieces")) {
      for (const auto& pj : j.at("pieces")) {
        doc.pieces.push_back({pj.at("piece").get<std::size_t>(), pj.at("m").get<std::size_t>(),
                              pj.at("seed").get<std::uint64_t>(), pj.at("converged").get<bool>(),
                              pj.at("iterations_used").get<int>()});
      }
    }
    return doc;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInputError(std::string("fit JSON: ") + e.what());
  }
}

inline FitDocument read_fit(const std::string& path) {
  try {
    return fit_from_json(Json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInputError("fit JSON '" + path + "': " + e.what());
  }
}

inline void write_json(const std::string& path, const Json& j) { write_file(path, j.dump(2) + "\n"); }

/// Recombination of serialized fits, which must share family, dimensions and
/// prior. Pieces are taken in the given order.
inline FitDocument recombine_documents(std::span<const FitDocument> docs) {
  if (docs.empty()) {
    throw DimensionError("recombine: no fits");
  }
  const FitDocument& first = docs.front();
  std::vector<GaussianFactor> betas;
  std::vector<WishartFactor> qs;
  FitDocument out{first.family, first.p, first.u, 0, first.beta, first.q, {}, true, 0, first.seed, first.prior,
                  true,         {}};
  for (std::size_t j = 0; j < docs.size(); ++j) {
    const auto& d = docs[j];
    if (d.family != first.family || d.p != first.p || d.u != first.u) {
      throw DimensionError("recombine: fit " + std::to_string(j) + " differs in family or dimensions");
    }
    if (d.prior.nu != first.prior.nu || d.prior.S != first.prior.S || d.prior.mu_beta != first.prior.mu_beta ||
        d.prior.sigma_beta != first.prior.sigma_beta) {
      throw RecombinationError("recombine: fit " + std::to_string(j) + " was fitted under a different prior");
    }
    if (d.combined) {
      throw RecombinationError("recombine: fit " + std::to_string(j) + " is already a combined posterior");
    }
    betas.push_back(d.beta);
    qs.push_back(d.q);
    out.m += d.m;
    out.per_subject.insert(out.per_subject.end(), d.per_subject.begin(), d.per_subject.end());
    out.converged = out.converged && d.converged;
    out.iterations_used = std::max(out.iterations_used, d.iterations_used);
    out.pieces.push_back({j, d.m, d.seed, d.converged, d.iterations_used});
  }
  out.beta = combine_gaussians(betas, GaussianFactor(first.prior.mu_beta, first.prior.sigma_beta));
  out.q = combine_wisharts(qs, WishartFactor(first.prior.nu, first.prior.S));
  return out;
}

// ---------------------------------------------------------------- partition CSV

inline std::string partition_csv(const Partition& partition) {
  std::string out = "subject_id,piece\n";
  for (std::size_t i = 0; i < partition.subject_ids().size(); ++i) {
    out += partition.subject_ids()[i] + "," + std::to_string(partition.assignment()[i]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- LPDS report

inline std::string column_list(const std::vector<Index>& cols, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out += (k ? ";" : "") + names[static_cast<std::size_t>(cols[k])];
  }
  return out;
}

inline std::string lpds_csv(const LpdsReport& report, const Dataset& data) {
  std::string out = "candidate,fixed_cols,random_cols,lpds\n";
  for (std::size_t c = 0; c < report.per_model.size(); ++c) {
    const auto& e = report.per_model[c];
    out += std::to_string(c) + "," + column_list(e.candidate.fixed_columns, data.x_names) + "," +
           column_list(e.candidate.random_columns, data.z_names) + "," + format_double(e.lpds) + "\n";
  }
  return out;
}

inline Json lpds_json(const LpdsReport& report, const Dataset& data, const Partition& partition) {
  Json models = Json::array();
  for (std::size_t c = 0; c < report.per_model.size(); ++c) {
    const auto& e = report.per_model[c];
    Json folds = Json::array();
    for (const double f : e.per_fold) {
      folds.push_back(f);
    }
    models.push_back({{"candidate", c},
                      {"fixed_cols", column_list(e.candidate.fixed_columns, data.x_names)},
                      {"random_cols", column_list(e.candidate.random_columns, data.z_names)},
                      {"lpds", e.lpds},
                      {"per_fold", std::move(folds)}});
  }
  return Json{{"family", std::string(to_string(data.family))},
              {"pieces", partition.pieces()},
              {"partition_seed", partition.seed()},
              {"best", report.best_index},
              {"models", std::move(models)}};
}

// ---------------------------------------------------------------- chain output

inline std::string chain_csv(const ChainResult& chain) {
  std::string out;
  for (std::size_t k = 0; k < chain.names.size(); ++k) {
    out += (k ? "," : "") + chain.names[k];
  }
  out += '\n';
  for (Index r = 0; r < chain.draws.rows(); ++r) {
    for (Index c = 0; c < chain.draws.cols(); ++c) {
      out += (c ? "," : "") + format_double(chain.draws(r, c));
    }
    out += '\n';
  }
  return out;
}

struct ChainTable {
  std::vector<std::string> names;
  Matrix draws;
};

inline ChainTable parse_chain_csv(std::string_view text) {
  const auto rows = detail::lines(text);
  if (rows.size() < 2) {
    throw EmptyDataError("chain CSV: no draws");
  }
  ChainTable t;
  for (const auto h : detail::split(rows[0], ',')) {
    t.names.emplace_back(h);
  }
  const Index d = static_cast<Index>(t.names.size());
  t.draws.resize(static_cast<Index>(rows.size() - 1), d);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto fields = detail::split(rows[r], ',');
    const std::string where = "chain CSV line " + std::to_string(r + 1);
    if (static_cast<Index>(fields.size()) != d) {
      throw InvalidInputError(where + ": wrong number of fields");
    }
    for (Index c = 0; c < d; ++c) {
      t.draws(static_cast<Index>(r - 1), c) = parse_double(fields[static_cast<std::size_t>(c)], where);
    }
  }
  return t;
}

inline Json chain_summary(const ChainResult& chain, const ChainConfig& config) {
  return Json{{"names", chain.names},
              {"means", detail::vector_json(chain.means())},
              {"sds", detail::vector_json(chain.sds())},
              {"acceptance_rate", chain.acceptance_rate},
              {"likelihood_evaluations", chain.likelihood_evaluations},
              {"n_iter", config.n_iter},
              {"burnin", config.burnin},
              {"is_samples", config.is_samples},
              {"seed", config.seed},
              {"warning", chain.warning}};
}

}  // namespace glmmvb::io
