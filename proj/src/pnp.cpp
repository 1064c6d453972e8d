#include "evpose/pnp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>

#include "evpose/error.hpp"
#include "evpose/rng.hpp"

namespace evpose {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_corr(const Correspondences& corr) {
  if (corr.points_3d.size() != corr.points_2d.size())
    throw ArgumentError("2D/3D correspondence counts differ");
  if (!(corr.camera.fx > 0) || !(corr.camera.fy > 0))
    throw ArgumentError("camera focal lengths must be positive");
}

std::optional<Eigen::Vector2d> reproject(const CameraIntrinsics& cam, const Eigen::Matrix3d& R,
                                         const Eigen::Vector3d& t, const Eigen::Vector3d& X) {
  const Eigen::Vector3d Xc = R * X + t;
  if (Xc.z() <= 1e-12) return std::nullopt;
  return Eigen::Vector2d(cam.fx * Xc.x() / Xc.z() + cam.cx, cam.fy * Xc.y() / Xc.z() + cam.cy);
}

double rmse_of(const Correspondences& corr, const Eigen::Matrix3d& R, const Eigen::Vector3d& t) {
  double sse = 0.0;
  for (std::size_t i = 0; i < corr.points_3d.size(); ++i) {
    auto uv = reproject(corr.camera, R, t, corr.points_3d[i]);
    if (!uv) return kInf;
    sse += (*uv - corr.points_2d[i]).squaredNorm();
  }
  return std::sqrt(sse / static_cast<double>(corr.points_3d.size()));
}

// Least-squares rigid alignment camera = R * body + t over matched clouds.
void procrustes(const std::vector<Eigen::Vector3d>& body,
                const std::vector<Eigen::Vector3d>& cam_pts, Eigen::Matrix3d& R,
                Eigen::Vector3d& t) {
  Eigen::Vector3d mb = Eigen::Vector3d::Zero(), mc = Eigen::Vector3d::Zero();
  for (const auto& p : body) mb += p;
  for (const auto& p : cam_pts) mc += p;
  mb /= static_cast<double>(body.size());
  mc /= static_cast<double>(cam_pts.size());

  Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < body.size(); ++i) H += (body[i] - mb) * (cam_pts[i] - mc).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  D(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  R = svd.matrixV() * D * svd.matrixU().transpose();
  t = mc - R * mb;
}

struct BetaCandidate {
  std::vector<double> beta;                  // one entry per null vector used
  std::vector<const Eigen::VectorXd*> vecs;  // matching null vectors
};

}  // namespace

double reprojection_rmse(const Correspondences& corr, const Pose& pose) {
  check_corr(corr);
  if (corr.points_3d.empty()) throw ArgumentError("no correspondences");
  return rmse_of(corr, pose.rotation(), pose.t);
}

Pose epnp(const Correspondences& corr) {
  check_corr(corr);
  const int n = static_cast<int>(corr.points_3d.size());
  if (n < 4) throw ArgumentError("epnp needs at least 4 correspondences");

  // Control points: centroid plus scaled principal axes (drop the weakest
  // axis for planar clouds).
  Eigen::Vector3d c0 = Eigen::Vector3d::Zero();
  for (const auto& X : corr.points_3d) c0 += X;
  c0 /= n;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& X : corr.points_3d) {
    const Eigen::Vector3d d = X - c0;
    cov += d * d.transpose();
  }
  cov /= n;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Eigen::Vector3d evals = eig.eigenvalues();  // ascending
  if (!(evals(2) > 0)) throw Error("epnp: degenerate (coincident) points");
  const bool planar = evals(0) < 1e-9 * evals(2);

  std::vector<Eigen::Vector3d> cw{c0};
  for (int j = planar ? 1 : 0; j < 3; ++j)
    cw.push_back(c0 + std::sqrt(std::max(evals(j), 0.0)) * eig.eigenvectors().col(j));
  const int m = static_cast<int>(cw.size());

  // Barycentric coordinates: [cw; 1] * alpha_i = [X_i; 1].
  Eigen::MatrixXd A(4, m);
  for (int j = 0; j < m; ++j) {
    A.block<3, 1>(0, j) = cw[j];
    A(3, j) = 1.0;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::MatrixXd alpha(n, m);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector4d b;
    b << corr.points_3d[i], 1.0;
    const Eigen::VectorXd a = qr.solve(b);
    if ((A * a - b).norm() > 1e-3 * (1.0 + b.norm()))
      throw Error("epnp: control points do not span the input");
    alpha.row(i) = a.transpose();
  }

  // Projection constraints on the camera-frame control points.
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(2 * n, 3 * m);
  for (int i = 0; i < n; ++i) {
    const double u = corr.points_2d[i].x();
    const double v = corr.points_2d[i].y();
    for (int j = 0; j < m; ++j) {
      const double a = alpha(i, j);
      M(2 * i, 3 * j) = a * corr.camera.fx;
      M(2 * i, 3 * j + 2) = a * (corr.camera.cx - u);
      M(2 * i + 1, 3 * j + 1) = a * corr.camera.fy;
      M(2 * i + 1, 3 * j + 2) = a * (corr.camera.cy - v);
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeFullV);
  const Eigen::VectorXd v1 = svd.matrixV().col(3 * m - 1);
  const Eigen::VectorXd v2 = svd.matrixV().col(3 * m - 2);

  std::vector<std::pair<int, int>> pairs;
  for (int j = 0; j < m; ++j)
    for (int k = j + 1; k < m; ++k) pairs.emplace_back(j, k);

  auto seg_diff = [](const Eigen::VectorXd& v, int j, int k) {
    return Eigen::Vector3d(v.segment<3>(3 * j) - v.segment<3>(3 * k));
  };

  std::vector<double> dist;
  for (auto [j, k] : pairs) dist.push_back((cw[j] - cw[k]).norm());

  std::vector<BetaCandidate> candidates;
  {
    // N = 1: single scale factor from the distance constraints.
    double num = 0.0, den = 0.0;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const Eigen::Vector3d dv = seg_diff(v1, pairs[p].first, pairs[p].second);
      num += dv.norm() * dist[p];
      den += dv.squaredNorm();
    }
    if (den > 0) candidates.push_back({{num / den}, {&v1}});
  }
  {
    // N = 2: solve for (b1^2, b1 b2, b2^2) then take consistent roots.
    Eigen::MatrixXd L(pairs.size(), 3);
    Eigen::VectorXd rho(pairs.size());
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const Eigen::Vector3d a = seg_diff(v1, pairs[p].first, pairs[p].second);
      const Eigen::Vector3d b = seg_diff(v2, pairs[p].first, pairs[p].second);
      L(p, 0) = a.squaredNorm();
      L(p, 1) = 2.0 * a.dot(b);
      L(p, 2) = b.squaredNorm();
      rho(p) = dist[p] * dist[p];
    }
    const Eigen::Vector3d bb = L.colPivHouseholderQr().solve(rho);
    double b1, b2;
    if (bb(0) >= 0) {
      b1 = std::sqrt(bb(0));
      b2 = b1 > 1e-12 ? bb(1) / b1 : std::sqrt(std::max(bb(2), 0.0));
    } else {
      b2 = std::sqrt(std::max(bb(2), 0.0));
      b1 = b2 > 1e-12 ? bb(1) / b2 : 0.0;
    }
    candidates.push_back({{b1, b2}, {&v1, &v2}});
  }

  // Gauss-Newton on the betas against the distance constraints.
  for (BetaCandidate& cand : candidates) {
    const int nb = static_cast<int>(cand.beta.size());
    for (int iter = 0; iter < 10; ++iter) {
      Eigen::MatrixXd J(pairs.size(), nb);
      Eigen::VectorXd r(pairs.size());
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        Eigen::Vector3d s = Eigen::Vector3d::Zero();
        for (int kk = 0; kk < nb; ++kk)
          s += cand.beta[kk] * seg_diff(*cand.vecs[kk], pairs[p].first, pairs[p].second);
        r(p) = s.squaredNorm() - dist[p] * dist[p];
        for (int kk = 0; kk < nb; ++kk)
          J(p, kk) = 2.0 * s.dot(seg_diff(*cand.vecs[kk], pairs[p].first, pairs[p].second));
      }
      const Eigen::MatrixXd JtJ = J.transpose() * J;
      const Eigen::VectorXd delta = JtJ.ldlt().solve(-J.transpose() * r);
      if (!delta.allFinite()) break;
      for (int kk = 0; kk < nb; ++kk) cand.beta[kk] += delta(kk);
      if (delta.norm() < 1e-12) break;
    }
  }

  double best_rmse = kInf;
  Eigen::Matrix3d best_R;
  Eigen::Vector3d best_t;
  for (const BetaCandidate& cand : candidates) {
    std::vector<Eigen::Vector3d> cc(m, Eigen::Vector3d::Zero());
    for (int j = 0; j < m; ++j)
      for (std::size_t kk = 0; kk < cand.beta.size(); ++kk)
        cc[j] += cand.beta[kk] * cand.vecs[kk]->segment<3>(3 * j);

    std::vector<Eigen::Vector3d> xc(n, Eigen::Vector3d::Zero());
    double zmean = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) xc[i] += alpha(i, j) * cc[j];
      zmean += xc[i].z();
    }
    if (std::abs(zmean) < 1e-12) continue;
    if (zmean < 0)  // cheirality: the null vector's sign is arbitrary
      for (auto& p : xc) p = -p;

    Eigen::Matrix3d R;
    Eigen::Vector3d t;
    procrustes(corr.points_3d, xc, R, t);
    const double e = rmse_of(corr, R, t);
    if (e < best_rmse) {
      best_rmse = e;
      best_R = R;
      best_t = t;
    }
  }
  if (!std::isfinite(best_rmse)) throw Error("epnp: no candidate places the points in view");

  Pose pose;
  pose.q = canonical(Eigen::Quaterniond(best_R).normalized());
  pose.t = best_t;
  return pose;
}

Pose refine(const Correspondences& corr, const Pose& initial, int max_iters, double damping,
            bool* diverged) {
  check_corr(corr);
  if (diverged) *diverged = false;
  const int n = static_cast<int>(corr.points_3d.size());
  if (n < 3) throw ArgumentError("refine needs at least 3 correspondences");

  Eigen::Matrix3d R = initial.rotation();
  Eigen::Vector3d t = initial.t;
  auto sse_of = [&](const Eigen::Matrix3d& Rc, const Eigen::Vector3d& tc) {
    const double r = rmse_of(corr, Rc, tc);
    return std::isfinite(r) ? r * r * n : kInf;
  };
  double cost = sse_of(R, t);
  if (!std::isfinite(cost)) {
    if (diverged) *diverged = true;
    return initial;
  }

  double lambda = damping;
  bool accepted_any = false;
  auto finish = [&]() {
    Pose p;
    p.q = canonical(Eigen::Quaterniond(R).normalized());
    p.t = t;
    return p;
  };

  for (int iter = 0; iter < max_iters; ++iter) {
    Eigen::MatrixXd J(2 * n, 6);
    Eigen::VectorXd r(2 * n);
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector3d mrot = R * corr.points_3d[i];
      const Eigen::Vector3d Xc = mrot + t;
      const double z = Xc.z();
      const double iz = 1.0 / z;
      r(2 * i) = corr.camera.fx * Xc.x() * iz + corr.camera.cx - corr.points_2d[i].x();
      r(2 * i + 1) = corr.camera.fy * Xc.y() * iz + corr.camera.cy - corr.points_2d[i].y();

      Eigen::Matrix<double, 2, 3> duv;
      duv << corr.camera.fx * iz, 0, -corr.camera.fx * Xc.x() * iz * iz,
          0, corr.camera.fy * iz, -corr.camera.fy * Xc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dXc;
      Eigen::Matrix3d mx;
      mx << 0, -mrot.z(), mrot.y(), mrot.z(), 0, -mrot.x(), -mrot.y(), mrot.x(), 0;
      dXc.block<3, 3>(0, 0) = -mx;  // d(exp(w) m)/dw at w = 0 is -[m]x ... sign: e_k x m
      dXc.block<3, 3>(0, 3) = Eigen::Matrix3d::Identity();
      J.block<2, 6>(2 * i, 0) = duv * dXc;
    }
    const Eigen::Matrix<double, 6, 6> H = J.transpose() * J;
    const Eigen::Matrix<double, 6, 1> g = J.transpose() * r;

    while (true) {
      Eigen::Matrix<double, 6, 6> Hl = H;
      for (int d = 0; d < 6; ++d) Hl(d, d) += lambda * std::max(H(d, d), 1e-12);
      const Eigen::Matrix<double, 6, 1> delta = Hl.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        if (lambda > 1e12) {
          if (diverged && !accepted_any) *diverged = true;
          return finish();
        }
        continue;
      }
      if (delta.norm() < 1e-10) return finish();

      const Eigen::Matrix3d Rn = quat_exp(delta.head<3>()).toRotationMatrix() * R;
      const Eigen::Vector3d tn = t + delta.tail<3>();
      const double cn = sse_of(Rn, tn);
      if (cn < cost) {
        const double gain = cost - cn;
        R = Rn;
        t = tn;
        cost = cn;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted_any = true;
        if (gain < 1e-12) return finish();
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e12) {
        if (diverged && !accepted_any) *diverged = true;
        return finish();
      }
    }
  }
  return finish();
}

PoseEstimate solve(const Correspondences& corr, const SolveConfig& config) {
  check_corr(corr);
  PoseEstimate est;
  try {
    if (corr.points_3d.size() < 4)
      throw InsufficientPointsError("pose solve needs at least 4 correspondences");
    const Pose initial = epnp(corr);
    bool diverged = false;
    const Pose refined =
        refine(corr, initial, config.refine_max_iters, config.refine_damping, &diverged);
    const double rmse = reprojection_rmse(corr, refined);
    if (!std::isfinite(rmse)) throw Error("refined pose places points behind the camera");
    est.pose.q = canonical(refined.q.normalized());
    est.pose.t = refined.t;
    est.reprojection_rmse = rmse;
    est.refine_diverged = diverged;
    est.status =
        refined.t.norm() > config.max_range_m ? PoseStatus::RejectedRange : PoseStatus::Ok;
  } catch (const Error&) {
    est = PoseEstimate{};
  }
  return est;
}

PoseEstimate solve_ransac(const Correspondences& corr, const RansacConfig& config) {
  check_corr(corr);
  const int n = static_cast<int>(corr.points_3d.size());
  if (n < 5) throw ArgumentError("ransac needs at least 5 correspondences");

  std::vector<std::array<int, 4>> subsets;
  if (n <= 8) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        for (int k = j + 1; k < n; ++k)
          for (int l = k + 1; l < n; ++l) subsets.push_back({i, j, k, l});
  } else {
    Rng rng(config.seed);
    for (int it = 0; it < config.iterations; ++it) {
      std::array<int, 4> s{};
      int filled = 0;
      while (filled < 4) {
        const int cand = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        bool dup = false;
        for (int q = 0; q < filled; ++q) dup |= s[q] == cand;
        if (!dup) s[filled++] = cand;
      }
      std::sort(s.begin(), s.end());
      subsets.push_back(s);
    }
  }

  std::vector<int> best_inliers;
  double best_rmse = kInf;
  for (const auto& sub : subsets) {
    Correspondences mini;
    mini.camera = corr.camera;
    for (int idx : sub) {
      mini.points_3d.push_back(corr.points_3d[idx]);
      mini.points_2d.push_back(corr.points_2d[idx]);
    }
    const PoseEstimate cand = solve(mini, config.solve);
    if (cand.status == PoseStatus::RejectedNoSolution) continue;

    const Eigen::Matrix3d R = cand.pose.rotation();
    std::vector<int> inliers;
    double sse = 0.0;
    for (int i = 0; i < n; ++i) {
      auto uv = reproject(corr.camera, R, cand.pose.t, corr.points_3d[i]);
      if (!uv) continue;
      const double err2 = (*uv - corr.points_2d[i]).squaredNorm();
      if (err2 <= config.inlier_threshold_px * config.inlier_threshold_px) {
        inliers.push_back(i);
        sse += err2;
      }
    }
    if (inliers.size() < 4) continue;
    const double rmse = std::sqrt(sse / static_cast<double>(inliers.size()));
    if (inliers.size() > best_inliers.size() ||
        (inliers.size() == best_inliers.size() && rmse < best_rmse)) {
      best_inliers = inliers;
      best_rmse = rmse;
    }
  }

  if (best_inliers.size() < 4) return PoseEstimate{};
  Correspondences consensus;
  consensus.camera = corr.camera;
  for (int idx : best_inliers) {
    consensus.points_3d.push_back(corr.points_3d[idx]);
    consensus.points_2d.push_back(corr.points_2d[idx]);
  }
  return solve(consensus, config.solve);
}

}  // namespace evpose
