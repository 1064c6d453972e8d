#include <cmath>
#include <numbers>

#include "doctest.h"

#include "evpose/geometry.hpp"
#include "evpose/pnp.hpp"
#include "evpose/rng.hpp"

using namespace evpose;

namespace {

CameraIntrinsics test_camera() { return {200.0, 200.0, 119.5, 89.5, 240, 180}; }

Pose random_pose(Rng& rng) {
  Pose p;
  const Eigen::Vector3d axis =
      Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
  p.q = quat_exp(axis * rng.uniform(0.0, 0.4));
  const double dist = rng.uniform(2.5, 4.5);
  p.t = Eigen::Vector3d(rng.uniform(-0.3, 0.3), rng.uniform(-0.25, 0.25), dist);
  return p;
}

Correspondences project_model(const TargetModel& model, const Pose& pose,
                              const CameraIntrinsics& cam) {
  Correspondences corr;
  corr.camera = cam;
  corr.points_3d = model.keypoints_3d;
  const Projection proj = project(model.keypoints_3d, pose, cam);
  corr.points_2d = proj.uv;
  return corr;
}

double rot_err_deg(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return a.angularDistance(b) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST_CASE("epnp plus refinement recovers exact poses") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  const CameraIntrinsics cam = test_camera();
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose gt = random_pose(rng);
    const Correspondences corr = project_model(model, gt, cam);
    const PoseEstimate est = solve(corr);
    REQUIRE(est.status == PoseStatus::Ok);
    CHECK(rot_err_deg(est.pose.q, gt.q) < 1e-4);
    CHECK((est.pose.t - gt.t).norm() < 1e-6);
    CHECK(est.reprojection_rmse < 1e-6);
    CHECK(est.pose.q.w() >= 0.0);  // canonical representative
  }
}

TEST_CASE("reprojection rmse hand case") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  const CameraIntrinsics cam = test_camera();
  Pose gt;
  gt.t = Eigen::Vector3d(0.0, 0.0, 3.0);
  Correspondences corr = project_model(model, gt, cam);
  CHECK(reprojection_rmse(corr, gt) < 1e-12);

  // shift every observation by the same (3, 4) pixel offset: rmse = 5
  for (Eigen::Vector2d& uv : corr.points_2d) uv += Eigen::Vector2d(3.0, 4.0);
  CHECK(reprojection_rmse(corr, gt) == doctest::Approx(5.0).epsilon(1e-12));

  // behind-camera points poison the error
  Pose behind = gt;
  behind.t.z() = -3.0;
  CHECK(std::isinf(reprojection_rmse(corr, behind)));
}

TEST_CASE("noisier observations give larger errors") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  const CameraIntrinsics cam = test_camera();
  Rng rng(23);
  double prev_mean = -1.0;
  for (double sigma : {0.0, 1.0, 3.0}) {
    double acc = 0.0;
    int n = 0;
    Rng noise(99);  // shared draws scale linearly with sigma
    for (int trial = 0; trial < 30; ++trial) {
      Rng pose_rng(1000 + trial);
      const Pose gt = random_pose(pose_rng);
      Correspondences corr = project_model(model, gt, cam);
      for (Eigen::Vector2d& uv : corr.points_2d)
        uv += Eigen::Vector2d(noise.gaussian(0.0, sigma), noise.gaussian(0.0, sigma));
      const PoseEstimate est = solve(corr);
      if (est.status != PoseStatus::Ok) continue;
      acc += rot_err_deg(est.pose.q, gt.q) * std::numbers::pi / 180.0 +
             (est.pose.t - gt.t).norm() / gt.t.norm();
      ++n;
    }
    REQUIRE(n > 25);
    const double mean = acc / n;
    CHECK(mean >= prev_mean);
    prev_mean = mean;
  }
  (void)rng;
}

TEST_CASE("planar targets solve through the three-control-point branch") {
  // four coplanar points (z = 0 plane in the body frame)
  Correspondences corr;
  corr.camera = test_camera();
  corr.points_3d = {{-0.5, -0.35, 0.0}, {0.5, -0.35, 0.0}, {0.5, 0.35, 0.0}, {-0.5, 0.35, 0.0}};
  Pose gt;
  gt.q = quat_exp(Eigen::Vector3d(0.2, -0.1, 0.3));
  gt.t = Eigen::Vector3d(0.1, -0.05, 3.2);
  const Projection proj = project(corr.points_3d, gt, corr.camera);
  corr.points_2d = proj.uv;

  const PoseEstimate est = solve(corr);
  REQUIRE(est.status == PoseStatus::Ok);
  CHECK(rot_err_deg(est.pose.q, gt.q) < 1e-3);
  CHECK((est.pose.t - gt.t).norm() < 1e-4);
}

TEST_CASE("far estimates are rejected by range") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  CameraIntrinsics cam = test_camera();
  Pose gt;
  gt.t = Eigen::Vector3d(0.0, 0.0, 35.0);  // beyond the 30 m gate
  const Correspondences corr = project_model(model, gt, cam);
  const PoseEstimate est = solve(corr);
  CHECK(est.status == PoseStatus::RejectedRange);
  CHECK(std::string(to_string(est.status)) == "rejected_range");
}

TEST_CASE("too few points or degenerate input is rejected, malformed input throws") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  const CameraIntrinsics cam = test_camera();
  Pose gt;
  gt.t = Eigen::Vector3d(0.0, 0.0, 3.0);
  Correspondences corr = project_model(model, gt, cam);
  corr.points_3d.resize(3);
  corr.points_2d.resize(3);
  CHECK(solve(corr).status == PoseStatus::RejectedNoSolution);

  Correspondences mismatched = project_model(model, gt, cam);
  mismatched.points_2d.pop_back();
  CHECK_THROWS_AS(solve(mismatched), ArgumentError);

  Correspondences bad_cam = project_model(model, gt, cam);
  bad_cam.camera.fx = 0.0;
  CHECK_THROWS_AS(solve(bad_cam), ArgumentError);

  // identical observations carry no pose information
  Correspondences collapsed = project_model(model, gt, cam);
  for (Eigen::Vector2d& uv : collapsed.points_2d) uv = Eigen::Vector2d(120.0, 90.0);
  CHECK(solve(collapsed).status != PoseStatus::Ok);
}

TEST_CASE("refinement improves a perturbed initial pose") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  const CameraIntrinsics cam = test_camera();
  Rng rng(31);
  const Pose gt = random_pose(rng);
  const Correspondences corr = project_model(model, gt, cam);

  Pose rough = gt;
  rough.q = (gt.q * quat_exp(Eigen::Vector3d(0.05, -0.04, 0.06))).normalized();
  rough.t += Eigen::Vector3d(0.05, -0.03, 0.1);
  const double before = reprojection_rmse(corr, rough);
  bool diverged = true;
  const Pose polished = refine(corr, rough, 30, 1e-3, &diverged);
  const double after = reprojection_rmse(corr, polished);
  CHECK(!diverged);
  CHECK(after < before * 1e-3);
  CHECK(rot_err_deg(polished.q, gt.q) < 1e-3);
}

TEST_CASE("ransac recovers the pose despite corrupted correspondences") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  const CameraIntrinsics cam = test_camera();
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose gt = random_pose(rng);
    Correspondences corr = project_model(model, gt, cam);
    corr.points_2d[1] += Eigen::Vector2d(55.0, -40.0);
    corr.points_2d[6] += Eigen::Vector2d(-60.0, 35.0);

    RansacConfig rc;
    rc.seed = 100 + trial;
    const PoseEstimate est = solve_ransac(corr, rc);
    REQUIRE(est.status == PoseStatus::Ok);
    CHECK(rot_err_deg(est.pose.q, gt.q) < 0.01);
    CHECK((est.pose.t - gt.t).norm() < 1e-3);

    // plain solve over the same data is dragged away by the outliers
    const PoseEstimate naive = solve(corr);
    if (naive.status == PoseStatus::Ok)
      CHECK(rot_err_deg(naive.pose.q, gt.q) > rot_err_deg(est.pose.q, gt.q));
  }
}

TEST_CASE("ransac is deterministic for a fixed seed") {
  const TargetModel model = cuboid_model(1.0, 0.7, 0.5);
  const CameraIntrinsics cam = test_camera();
  Rng rng(53);
  const Pose gt = random_pose(rng);
  Correspondences corr = project_model(model, gt, cam);
  corr.points_2d[3] += Eigen::Vector2d(70.0, 10.0);
  // add noise so different consensus sets give measurably different poses
  Rng noise(7);
  for (Eigen::Vector2d& uv : corr.points_2d)
    uv += Eigen::Vector2d(noise.gaussian(0.0, 0.5), noise.gaussian(0.0, 0.5));

  RansacConfig rc;
  rc.seed = 9;
  const PoseEstimate a = solve_ransac(corr, rc);
  const PoseEstimate b = solve_ransac(corr, rc);
  CHECK(a.pose.q.coeffs() == b.pose.q.coeffs());
  CHECK(a.pose.t == b.pose.t);
  CHECK(a.reprojection_rmse == b.reprojection_rmse);
}
