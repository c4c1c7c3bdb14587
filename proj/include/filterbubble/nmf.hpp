#pragma once

// NMF by alternating non-negative least squares, each subproblem solved with
// projected gradient and an Armijo-type step search; NNDSVD initialization;
// fold-in of new documents against a fixed basis.

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "filterbubble/error.hpp"
#include "filterbubble/hash.hpp"
#include "filterbubble/parallel.hpp"
#include "filterbubble/svd.hpp"
#include "filterbubble/textpipe.hpp"

namespace filterbubble {

using Eigen::MatrixXd;

struct SolverOpts {
  double tol = 1e-4;  // outer stop: projected gradient relative to the initial gradient
  int max_outer = 200;
  int max_subproblem_iter = 1000;
  int max_step_search = 20;
  double beta = 0.1;    // step-size shrink / growth factor
  double sigma = 0.01;  // sufficient-decrease constant
  double svd_tol = 1e-10;
  unsigned workers = 1;

  nlohmann::json to_json() const {
    return {{"tol", tol},   {"max_outer", max_outer}, {"max_subproblem_iter", max_subproblem_iter},
            {"max_step_search", max_step_search}, {"beta", beta}, {"sigma", sigma}, {"svd_tol", svd_tol}};
  }
};

struct TopicModel {
  MatrixXd W;  // terms x topics
  MatrixXd H;  // topics x documents
  int topics = 0;
  std::vector<double> objective_trace;  // ||V - WH||_F at start and after each outer iteration
  int outer_iterations = 0;
  bool converged = false;
  std::string vocab_hash;
  std::vector<std::string> doc_ids;
};

struct ProjectedWeights {
  MatrixXd H;  // topics x documents
  std::string basis_hash;
  int iterations = 0;
  std::vector<std::string> doc_ids;
};

struct NnlsResult {
  int iterations = 0;
  double projected_gradient = 0.0;
};

namespace detail {

inline void check_finite(const MatrixXd& M, const char* what) {
  if (!M.allFinite()) throw Error(ErrorCode::NonFiniteValue, std::string(what) + " contains a non-finite value");
}

inline void check_input(const SparseMatrix& V) {
  for (Eigen::Index c = 0; c < V.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(V, c); it; ++it) {
      if (!std::isfinite(it.value())) throw Error(ErrorCode::NonFiniteValue, "input matrix entry is not finite");
      if (it.value() < 0.0) throw Error(ErrorCode::DegenerateMatrix, "input matrix has a negative entry");
    }
}

// Left-multiplies a sparse matrix by a dense one, column chunk by chunk.
inline MatrixXd dense_times_sparse(const MatrixXd& D, const SparseMatrix& S, unsigned workers) {
  MatrixXd out(D.rows(), S.cols());
  parallel_chunks(static_cast<std::size_t>(S.cols()), workers, [&](std::size_t, std::size_t b, std::size_t e) {
    const auto len = static_cast<Eigen::Index>(e - b);
    out.middleCols(static_cast<Eigen::Index>(b), len).noalias() =
        D * S.middleCols(static_cast<Eigen::Index>(b), len);
  });
  return out;
}

inline double projected_gradient_sq(const MatrixXd& grad, const MatrixXd& X, unsigned workers) {
  return parallel_sum(static_cast<std::size_t>(X.cols()), workers, [&](std::size_t b, std::size_t e) {
    double s = 0.0;
    for (auto c = static_cast<Eigen::Index>(b); c < static_cast<Eigen::Index>(e); ++c)
      for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const double g = grad(r, c);
        if (g < 0.0 || X(r, c) > 0.0) s += g * g;
      }
    return s;
  });
}

// ||V - W H||_F from explicit column chunks of W H; the expanded form cancels
// badly near an exact fit.
inline double frobenius_residual(const SparseMatrix& V, const MatrixXd& W, const MatrixXd& H, unsigned workers) {
  const double sq = parallel_sum(static_cast<std::size_t>(V.cols()), workers, [&](std::size_t b, std::size_t e) {
    const auto begin = static_cast<Eigen::Index>(b), len = static_cast<Eigen::Index>(e - b);
    MatrixXd R = W * H.middleCols(begin, len);
    for (Eigen::Index c = 0; c < len; ++c)
      for (SparseMatrix::InnerIterator it(V, begin + c); it; ++it) R(it.row(), c) -= it.value();
    return R.squaredNorm();
  });
  return std::sqrt(sq);
}

}  // namespace detail

/// Projected-gradient solver for min_{X >= 0} 1/2 ||V - W X||_F^2 given
/// gram = W^T W and cross = W^T V. Runs until the projected gradient norm is
/// at most `tol` or the iteration cap is hit. The step size persists across
/// iterations: it is shrunk by beta until sufficient decrease holds, or grown
/// by 1/beta while it keeps holding.
inline NnlsResult solve_nnls(const MatrixXd& gram, const MatrixXd& cross, MatrixXd& X, double tol,
                             const SolverOpts& opts) {
  const auto cols = static_cast<std::size_t>(X.cols());
  const unsigned workers = opts.workers;
  MatrixXd grad(X.rows(), X.cols()), Xn(X.rows(), X.cols()), Xp(X.rows(), X.cols());
  double alpha = 1.0;
  NnlsResult result;

  for (int iter = 1; iter <= opts.max_subproblem_iter; ++iter) {
    result.iterations = iter;
    parallel_chunks(cols, workers, [&](std::size_t, std::size_t b, std::size_t e) {
      const auto s = static_cast<Eigen::Index>(b), n = static_cast<Eigen::Index>(e - b);
      grad.middleCols(s, n).noalias() = gram * X.middleCols(s, n);
      grad.middleCols(s, n) -= cross.middleCols(s, n);
    });
    result.projected_gradient = std::sqrt(detail::projected_gradient_sq(grad, X, workers));
    if (result.projected_gradient <= tol) break;

    bool decrease_alpha = false;
    bool accepted = false;
    for (int inner = 1; inner <= opts.max_step_search; ++inner) {
      // Xn = P[X - alpha grad]; sufficient decrease on the quadratic model.
      double gradd = 0.0, dQd = 0.0;
      {
        std::vector<double> g_part(chunk_count(cols), 0.0), q_part(chunk_count(cols), 0.0);
        parallel_chunks(cols, workers, [&](std::size_t c, std::size_t b, std::size_t e) {
          const auto s = static_cast<Eigen::Index>(b), n = static_cast<Eigen::Index>(e - b);
          Xn.middleCols(s, n) = (X.middleCols(s, n) - alpha * grad.middleCols(s, n)).cwiseMax(0.0);
          const MatrixXd d = Xn.middleCols(s, n) - X.middleCols(s, n);
          g_part[c] = grad.middleCols(s, n).cwiseProduct(d).sum();
          q_part[c] = (gram * d).cwiseProduct(d).sum();
        });
        for (std::size_t c = 0; c < g_part.size(); ++c) {
          gradd += g_part[c];
          dQd += q_part[c];
        }
      }
      const bool sufficient = (1.0 - opts.sigma) * gradd + 0.5 * dQd < 0.0;
      if (inner == 1) {
        decrease_alpha = !sufficient;
        Xp = X;
      }
      if (decrease_alpha) {
        if (sufficient) {
          X = Xn;
          accepted = true;
          break;
        }
        alpha *= opts.beta;
      } else {
        if (!sufficient || Xp == Xn) {
          X = Xp;
          accepted = true;
          break;
        }
        alpha /= opts.beta;
        Xp = Xn;
      }
    }
    // Growth phase ran out of trials: keep the last point that passed.
    if (!accepted && !decrease_alpha) X = Xp;
  }
  return result;
}

/// 1/2 ||V - W H||_F^2 up to the constant 1/2 ||V||^2, i.e. the NNLS objective
/// used to check monotonicity of a single subproblem.
inline double nnls_objective(const MatrixXd& gram, const MatrixXd& cross, const MatrixXd& X) {
  return 0.5 * (gram * X).cwiseProduct(X).sum() - cross.cwiseProduct(X).sum();
}

// ---------------------------------------------------------------------------
// Initialization

struct NmfInit {
  MatrixXd W;
  MatrixXd H;
};

/// Basic NNDSVD: the leading triplet gives the first factor pair; each later
/// triplet contributes whichever of its positive or negative sections carries
/// more mass. Zeros stay zero.
inline NmfInit nndsvd_init(const SparseMatrix& V, int topics, double svd_tol = 1e-10) {
  if (topics < 1 || topics > std::min(V.rows(), V.cols()))
    throw Error(ErrorCode::InvalidTopicCount, "T=" + std::to_string(topics));
  detail::check_input(V);
  const SvdResult svd = truncated_svd(V, topics, svd_tol);
  NmfInit init{MatrixXd::Zero(V.rows(), topics), MatrixXd::Zero(topics, V.cols())};

  init.W.col(0) = std::sqrt(svd.S[0]) * svd.U.col(0).cwiseAbs();
  init.H.row(0) = std::sqrt(svd.S[0]) * svd.V.col(0).cwiseAbs().transpose();
  for (int j = 1; j < topics; ++j) {
    const Eigen::VectorXd x = svd.U.col(j), y = svd.V.col(j);
    const Eigen::VectorXd xp = x.cwiseMax(0.0), xn = (-x).cwiseMax(0.0);
    const Eigen::VectorXd yp = y.cwiseMax(0.0), yn = (-y).cwiseMax(0.0);
    const double xpn = xp.norm(), ypn = yp.norm(), xnn = xn.norm(), ynn = yn.norm();
    const double mp = xpn * ypn, mn = xnn * ynn;
    const bool positive = mp > mn;
    const double mass = positive ? mp : mn;
    if (mass <= 0.0) continue;
    const double scale = std::sqrt(svd.S[j] * mass);
    init.W.col(j) = scale * (positive ? Eigen::VectorXd(xp / xpn) : Eigen::VectorXd(xn / xnn));
    init.H.row(j) = scale * (positive ? Eigen::VectorXd(yp / ypn) : Eigen::VectorXd(yn / ynn)).transpose();
  }
  return init;
}

// ---------------------------------------------------------------------------
// Fit

inline TopicModel nmf_fit(const SparseMatrix& V, int topics, const SolverOpts& opts = {}) {
  if (topics < 1) throw Error(ErrorCode::InvalidTopicCount, "T must be >= 1");
  Eigen::Index nonempty = 0;
  for (Eigen::Index c = 0; c < V.outerSize(); ++c)
    if (SparseMatrix::InnerIterator(V, c)) ++nonempty;
  if (topics > nonempty || topics > V.rows())
    throw Error(ErrorCode::InvalidTopicCount, "T=" + std::to_string(topics) + " exceeds " +
                                                  std::to_string(std::min<Eigen::Index>(nonempty, V.rows())) +
                                                  " usable dimensions");
  detail::check_input(V);

  NmfInit init = nndsvd_init(V, topics, opts.svd_tol);
  TopicModel model;
  model.topics = topics;
  MatrixXd& W = model.W;
  MatrixXd& H = model.H;
  W = std::move(init.W);
  H = std::move(init.H);

  const unsigned workers = opts.workers;
  const SparseMatrix Vt = V.transpose();

  MatrixXd WtW = W.transpose() * W;
  MatrixXd WtV = detail::dense_times_sparse(W.transpose(), V, workers);
  MatrixXd HHt = H * H.transpose();
  MatrixXd HVt = detail::dense_times_sparse(H, Vt, workers);
  MatrixXd gradW = W * HHt - HVt.transpose();
  MatrixXd gradH = WtW * H - WtV;
  const double init_grad = std::sqrt(gradW.squaredNorm() + gradH.squaredNorm());
  // Floor at rounding level: an exact initial factorization has init_grad ~ 0.
  const double grad_floor = 1e-13 * std::sqrt(V.squaredNorm()) * (W.norm() + H.norm());
  double tolW = std::max(std::max(1e-3, opts.tol) * init_grad, grad_floor);
  double tolH = tolW;
  model.objective_trace.push_back(detail::frobenius_residual(V, W, H, workers));

  for (int iter = 0; iter < opts.max_outer; ++iter) {
    if (iter > 0) {
      HVt = detail::dense_times_sparse(H, Vt, workers);
      gradW = W * HHt - HVt.transpose();
      gradH = WtW * H - WtV;
    }
    const MatrixXd Wt_view = W.transpose();
    const double projnorm = std::sqrt(detail::projected_gradient_sq(gradW.transpose(), Wt_view, workers) +
                                      detail::projected_gradient_sq(gradH, H, workers));
    if (projnorm <= std::max(opts.tol * init_grad, grad_floor)) {
      model.converged = true;
      break;
    }

    MatrixXd Wt = Wt_view;
    if (solve_nnls(HHt, HVt, Wt, tolW, opts).iterations == 1) tolW = std::max(0.1 * tolW, grad_floor);
    W = Wt.transpose();

    WtW = W.transpose() * W;
    WtV = detail::dense_times_sparse(W.transpose(), V, workers);
    if (solve_nnls(WtW, WtV, H, tolH, opts).iterations == 1) tolH = std::max(0.1 * tolH, grad_floor);

    HHt = H * H.transpose();
    model.objective_trace.push_back(detail::frobenius_residual(V, W, H, workers));
    model.outer_iterations = iter + 1;
  }
  detail::check_finite(W, "W");
  detail::check_finite(H, "H");
  return model;
}

inline TopicModel nmf_fit(const TfIdfMatrix& V, int topics, const SolverOpts& opts = {}) {
  TopicModel m = nmf_fit(V.values, topics, opts);
  m.vocab_hash = V.vocab_hash;
  m.doc_ids = V.doc_ids;
  return m;
}

// ---------------------------------------------------------------------------
// Projection

inline std::string basis_hash(const MatrixXd& W) {
  Sha256 h;
  h.update(std::to_string(W.rows()) + "x" + std::to_string(W.cols()) + "\n");
  h.update(std::string_view(reinterpret_cast<const char*>(W.data()), sizeof(double) * static_cast<std::size_t>(W.size())));
  return h.hex();
}

/// Topic weights for new documents against a fixed basis: one outer
/// iteration of the H subproblem (an NNLS solve to the relative tolerance
/// max(1e-3, tol) of the initial gradient), starting from H = 0 unless an
/// initial point is supplied.
inline ProjectedWeights nmf_project(const SparseMatrix& V, const MatrixXd& W, const SolverOpts& opts = {},
                                    const std::optional<MatrixXd>& init = std::nullopt) {
  if (V.rows() != W.rows())
    throw Error(ErrorCode::DimensionMismatch, "documents have " + std::to_string(V.rows()) +
                                                  " terms, basis has " + std::to_string(W.rows()));
  detail::check_input(V);
  detail::check_finite(W, "W");
  ProjectedWeights out;
  out.basis_hash = basis_hash(W);
  out.H = init ? *init : MatrixXd::Zero(W.cols(), V.cols());
  if (out.H.rows() != W.cols() || out.H.cols() != V.cols())
    throw Error(ErrorCode::DimensionMismatch, "initial H has the wrong shape");

  const MatrixXd gram = W.transpose() * W;
  const MatrixXd cross = detail::dense_times_sparse(W.transpose(), V, opts.workers);
  const double init_grad = (gram * out.H - cross).norm();
  const double tol = std::max(1e-3, opts.tol) * init_grad;
  out.iterations = solve_nnls(gram, cross, out.H, tol, opts).iterations;
  return out;
}

inline ProjectedWeights nmf_project(const TfIdfMatrix& V, const TopicModel& model, const SolverOpts& opts = {},
                                    const std::optional<MatrixXd>& init = std::nullopt) {
  if (!model.vocab_hash.empty() && !V.vocab_hash.empty() && model.vocab_hash != V.vocab_hash)
    throw Error(ErrorCode::DimensionMismatch, "documents and basis use different vocabularies");
  ProjectedWeights p = nmf_project(V.values, model.W, opts, init);
  p.doc_ids = V.doc_ids;
  return p;
}

// ---------------------------------------------------------------------------
// Topic inspection

using RankedTerms = std::vector<std::pair<std::string, double>>;

namespace detail {
inline RankedTerms top_entries(const Eigen::VectorXd& weights, const std::vector<std::string>& names, std::size_t n) {
  RankedTerms all;
  for (Eigen::Index i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) all.emplace_back(names[static_cast<std::size_t>(i)], weights[i]);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (all.size() > n) all.resize(n);
  return all;
}
}  // namespace detail

/// The n heaviest terms of a topic's basis vector; equal weights in
/// lexicographic term order. Zero weights are never listed.
inline RankedTerms top_terms(const TopicModel& model, const std::vector<std::string>& terms, int topic, std::size_t n) {
  if (topic < 0 || topic >= model.W.cols())
    throw Error(ErrorCode::IndexOutOfRange, "topic " + std::to_string(topic));
  if (static_cast<Eigen::Index>(terms.size()) != model.W.rows())
    throw Error(ErrorCode::DimensionMismatch, "vocabulary size does not match W");
  return detail::top_entries(model.W.col(topic), terms, n);
}

struct TopicTermReport {
  std::vector<RankedTerms> terms;     // per topic
  std::vector<RankedTerms> channels;  // per topic, by H weight
};

inline TopicTermReport topic_term_report(const TopicModel& model, const std::vector<std::string>& terms,
                                         std::size_t n_terms, std::size_t n_channels) {
  TopicTermReport r;
  for (int t = 0; t < model.W.cols(); ++t) {
    r.terms.push_back(top_terms(model, terms, t, n_terms));
    r.channels.push_back(detail::top_entries(model.H.row(t).transpose(), model.doc_ids, n_channels));
  }
  return r;
}

/// Machine-readable lines: "term|channel <TAB> topic <TAB> rank <TAB> id <TAB> weight".
inline void write_topic_report_tsv(const TopicTermReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(17);
  for (std::size_t t = 0; t < r.terms.size(); ++t) {
    for (std::size_t i = 0; i < r.terms[t].size(); ++i)
      out << "term\t" << t << '\t' << i + 1 << '\t' << r.terms[t][i].first << '\t' << r.terms[t][i].second << '\n';
    for (std::size_t i = 0; i < r.channels[t].size(); ++i)
      out << "channel\t" << t << '\t' << i + 1 << '\t' << r.channels[t][i].first << '\t' << r.channels[t][i].second
          << '\n';
  }
}

/// The labeling aid: one block per topic with its leading terms and channels.
inline void write_topic_report_text(const TopicTermReport& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::fixed << std::setprecision(4);
  for (std::size_t t = 0; t < r.terms.size(); ++t) {
    out << "Topic " << t << '\n';
    out << "  terms:   ";
    for (std::size_t i = 0; i < r.terms[t].size(); ++i)
      out << (i ? ", " : "") << r.terms[t][i].first << " (" << r.terms[t][i].second << ")";
    out << "\n  channels: ";
    for (std::size_t i = 0; i < r.channels[t].size(); ++i)
      out << (i ? ", " : "") << r.channels[t][i].first << " (" << r.channels[t][i].second << ")";
    out << "\n\n";
  }
}

// ---------------------------------------------------------------------------
// Dense matrix files
//
//   shape <rows> <cols>
//   meta <single-line JSON>
//   <rows lines of cols space-separated values>

inline void write_dense(const MatrixXd& M, const nlohmann::json& meta, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "shape " << M.rows() << ' ' << M.cols() << '\n';
  out << "meta " << meta.dump() << '\n';
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < M.rows(); ++r) {
    for (Eigen::Index c = 0; c < M.cols(); ++c) out << (c ? " " : "") << M(r, c);
    out << '\n';
  }
}

inline std::pair<MatrixXd, nlohmann::json> read_dense(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string tag;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> tag >> rows >> cols) || tag != "shape")
    throw Error(ErrorCode::MalformedRecord, path.string() + ": bad shape header");
  std::string line;
  std::getline(in, line);
  if (!std::getline(in, line) || line.rfind("meta ", 0) != 0)
    throw Error(ErrorCode::MalformedRecord, path.string() + ": missing meta line");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(line.substr(5));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedRecord, path.string() + ": " + e.what());
  }
  MatrixXd M(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      if (!(in >> M(r, c))) throw Error(ErrorCode::MalformedRecord, path.string() + ": truncated data");
  return {std::move(M), std::move(meta)};
}

}  // namespace filterbubble
