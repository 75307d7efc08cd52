#include <catch_amalgamated.hpp>

#include <random>

#include "closurelab/harness.hpp"

using namespace closurelab;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("ridge solve") {
    SECTION("identity design") {
        Eigen::VectorXd y(3);
        y << 1.0, 2.0, 3.0;
        CHECK((ridge_solve(Eigen::MatrixXd::Identity(3, 3), y, 1e-8) - y / (1.0 + 1e-8)).cwiseAbs().maxCoeff() < 1e-15);
    }
    SECTION("large lambda shrinks toward zero") {
        const Eigen::MatrixXd Phi = Eigen::MatrixXd::Random(30, 4);
        const Eigen::VectorXd y = Eigen::VectorXd::Random(30);
        CHECK(ridge_solve(Phi, y, 1e12).norm() < 1e-10);
    }
    SECTION("matches the normal-equation oracle") {
        std::mt19937_64 gen(3);
        std::normal_distribution<double> N(0.0, 1.0);
        Eigen::MatrixXd Phi(50, 6);
        Eigen::VectorXd y(50);
        for (Eigen::Index i = 0; i < Phi.size(); ++i) Phi.data()[i] = N(gen);
        for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = N(gen);
        const Eigen::MatrixXd G = Phi.transpose() * Phi + 1e-8 * Eigen::MatrixXd::Identity(6, 6);
        const Eigen::VectorXd ref = G.ldlt().solve(Phi.transpose() * y);
        CHECK((ridge_solve(Phi, y, 1e-8) - ref).norm() / ref.norm() < 1e-8);
    }
    SECTION("singular without regularization") {
        Eigen::MatrixXd Phi = Eigen::MatrixXd::Random(10, 3);
        Phi.col(2) = Phi.col(0);
        CHECK_THROWS_AS(ridge_solve(Phi, Eigen::VectorXd::Ones(10), 0.0), SingularSystemError);
        CHECK(ridge_solve(Phi, Eigen::VectorXd::Ones(10), 1e-8).allFinite());
    }
    SECTION("argument checks") {
        CHECK_THROWS_AS(ridge_solve(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(2), 1.0), Error);
        CHECK_THROWS_AS(ridge_solve(Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Ones(3), -1.0), Error);
    }
    SECTION("coefficient norm is nonincreasing in lambda") {
        const Eigen::MatrixXd Phi = Eigen::MatrixXd::Random(40, 5);
        const Eigen::VectorXd y = Eigen::VectorXd::Random(40);
        double prev = std::numeric_limits<double>::infinity();
        for (double lam : {1e-8, 1e-4, 1e-2, 1.0, 1e2, 1e4}) {
            const double n = ridge_solve(Phi, y, lam).norm();
            CHECK(n <= prev * (1.0 + 1e-12));
            prev = n;
        }
    }
}

TEST_CASE("dictionary-synthesized targets are recovered") {
    const Protocol p;
    const auto data = generate_training_data(p, CaseId::A, 0);
    const auto tests = build_test_functions(4, 4, Grid1D(64));
    Eigen::VectorXd theta(7);
    theta << 0.01, 0.05, 0.0, 0.0, 1.0, -1.0, 0.0;
    SECTION("weak system") {
        const auto sys = assemble_design_matrix(data, 2, 3, tests);
        const auto g = gram_diagnostics(sys);
        const Eigen::VectorXd est = ridge_solve(sys.design, sys.design * theta, kDefaultRidge);
        INFO("ridge bias bound " << kDefaultRidge / g.min_eigenvalue);
        CHECK((est - theta).norm() / theta.norm() <= kDefaultRidge / g.min_eigenvalue * 1.01);
        CHECK((ridge_solve(sys.design, sys.design * theta, 0.0) - theta).norm() / theta.norm() < 1e-7);
    }
    SECTION("strong system") {
        const auto sys = assemble_strong_system(data, 2, 3);
        const Eigen::VectorXd est = ridge_solve(sys.design, sys.design * theta, kDefaultRidge);
        CHECK((est - theta).norm() / theta.norm() < 1e-6);
    }
}

TEST_CASE("polynomial closure evaluation and export") {
    PolyClosure pc;
    pc.aD = Eigen::Vector3d(0.01, 0.05, 0.0);
    pc.bR = Eigen::Vector4d(0.0, 1.0, -1.0, 0.0);
    CHECK_THAT(pc.D(0.5), WithinAbs(0.035, 1e-15));
    CHECK_THAT(pc.to_closure().R(0.5), WithinAbs(0.25, 1e-15));
    std::ostringstream os;
    pc.write_csv(os);
    CHECK(os.str().starts_with("term,index,value\nD,0,0.01"));
}

TEST_CASE("baseline fits on clean data") {
    const Protocol p;
    const auto tests = build_test_functions(4, 4, Grid1D(64));
    double strongA = 0.0, weakA = 0.0;
    for (int seed : {0, 1, 2}) {
        const auto data = generate_training_data(p, CaseId::A, seed);
        const Interval sup = dataset_range(data);
        strongA += closure_error(true_closure(CaseId::A), fit_strong_poly(data).to_closure(), sup).err_D / 3.0;
        weakA += closure_error(true_closure(CaseId::A), fit_weak_poly(data, tests).to_closure(), sup).err_D / 3.0;
    }
    INFO("strong " << strongA << " weak " << weakA);
    CHECK(strongA >= 1e-4);
    CHECK(strongA <= 1e-3);
    CHECK(weakA >= 2e-3);
    CHECK(weakA <= 3e-2);

    const auto dataB = generate_training_data(p, CaseId::B, 0);
    const double errRB = closure_error(true_closure(CaseId::B), fit_strong_poly(dataB).to_closure(), dataset_range(dataB)).err_R;
    CHECK(errRB < 2.6e-2);
}

TEST_CASE("constant trajectory does not break the strong fit") {
    Trajectory t;
    t.grid = Grid1D(32);
    t.dt_save = 1e-3;
    t.states = Snapshots::Constant(5, 32, 0.5);
    const auto fit = fit_strong_poly({t});
    CHECK(fit.aD.allFinite());
    CHECK(fit.bR.allFinite());
    CHECK(fit.provenance == Provenance::strong_poly);
}
