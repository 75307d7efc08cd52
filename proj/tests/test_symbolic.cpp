#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "closurelab/harness.hpp"
#include "properties.hpp"

using namespace closurelab;
using Catch::Matchers::WithinAbs;

namespace {
Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}
const Eigen::ArrayXd unit_grid = Eigen::ArrayXd::LinSpaced(256, 0.0, 1.0);
}  // namespace

TEST_CASE("closure sampling") {
    const auto s = sample_closure(true_closure(CaseId::A), 0.0, 1.0, 2);
    REQUIRE(s.u.size() == 2);
    CHECK(s.u[0] == 0.0);
    CHECK(s.u[1] == 1.0);
    CHECK_THAT(s.D[0], WithinAbs(0.01, 1e-15));
    CHECK_THAT(s.D[1], WithinAbs(0.06, 1e-15));
    CHECK_THROWS_AS(sample_closure(true_closure(CaseId::A), 1.0, 0.0), Error);
    CHECK_THROWS_AS(sample_closure(true_closure(CaseId::A), 0.0, 1.0, 1), Error);
}

TEST_CASE("exact quadratic is recovered") {
    const Eigen::ArrayXd y = 2.0 - 3.0 * unit_grid + unit_grid.square();
    const auto fit = fit_family(unit_grid, y, Family::poly2);
    CHECK((fit.params - vec({2.0, -3.0, 1.0})).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(fit.fit_error < 1e-20);
}

TEST_CASE("nonlinear families recover the exponential case") {
    const auto s = sample_closure(true_closure(CaseId::Exp), 0.0, 1.0, 256);
    const auto d = fit_family(s.u, s.D, Family::exp_decay);
    CHECK((d.params - vec({0.01, 0.035, 2.5})).cwiseAbs().maxCoeff() < 1e-6);
    const auto r = fit_family(s.u, s.R, Family::u_exp);
    CHECK((r.params - vec({1.1, -1.4, -0.22})).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("complexity counts") {
    CHECK(complexity(Family::poly1, vec({0.01, 0.05})) == 5);
    CHECK(complexity(Family::poly1, vec({0.01, 0.0})) == 1);
    CHECK(complexity(Family::poly2, vec({0.3, 0.0, 0.0})) == 1);
    CHECK(complexity(Family::exp_decay, vec({0.01, 0.035, 2.5})) == 11);
    CHECK(complexity(Family::poly2, vec({1.0, 1.0, 1.0})) > complexity(Family::poly1, vec({1.0, 1.0})));
    CHECK(complexity(Family::rational22, vec({1.0, 1.0, 1.0, 0.5, 0.5})) > complexity(Family::poly2, vec({1.0, 1.0, 1.0})));
}

TEST_CASE("selection") {
    const Eigen::ArrayXd y = 2.0 - 3.0 * unit_grid + unit_grid.square();
    SECTION("single candidate") {
        const auto e = select({fit_family(unit_grid, y, Family::poly2)});
        CHECK(e.family == Family::poly2);
    }
    SECTION("simpler exact fit wins") {
        const auto e = select({fit_family(unit_grid, y, Family::poly3), fit_family(unit_grid, y, Family::poly2)});
        CHECK(e.family == Family::poly2);
    }
    SECTION("inadmissible simple candidate loses") {
        const auto e = select({fit_family(unit_grid, y, Family::poly1), fit_family(unit_grid, y, Family::poly2)});
        CHECK(e.family == Family::poly2);
    }
    SECTION("selected error is within tolerance of the best") {
        const auto s = sample_closure(true_closure(CaseId::B), 0.0, 1.2);
        std::vector<FitResult> fits;
        for (Family f : CandidateLibrary{}.reaction) fits.push_back(fit_family(s.u, s.R, f));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& f : fits) best = std::min(best, f.fit_error);
        CHECK(select(fits).fit_error <= 1.05 * best + 1e-8);
    }
    SECTION("adding an inadmissible candidate does not raise complexity") {
        std::vector<FitResult> fits = {fit_family(unit_grid, y, Family::poly2), fit_family(unit_grid, y, Family::poly3)};
        const int before = select(fits).complexity;
        fits.push_back(fit_family(unit_grid, y, Family::poly0));
        CHECK(select(fits).complexity <= before);
    }
    SECTION("empty list") { CHECK_THROWS_AS(select({}), Error); }
}

TEST_CASE("generate and refit") {
    const auto chk = props::generate_and_refit();
    INFO(chk.detail);
    CHECK(chk.pass);
}

TEST_CASE("denominators stay away from zero") {
    std::mt19937_64 gen(8);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        const double a = U(gen), b = U(gen);
        const Eigen::ArrayXd y = a * (3.0 * unit_grid).sin() + b / (1.15 - unit_grid);
        for (Family f : {Family::rational22, Family::saturation, Family::u_saturation}) {
            const auto fit = fit_family(unit_grid, y, f, static_cast<std::uint64_t>(k));
            Eigen::ArrayXd den;
            Eigen::MatrixXd dden;
            sym_detail::denominator(f, fit.params, unit_grid, den, dden);
            CHECK(den.minCoeff() > 0.05);
        }
    }
}

TEST_CASE("compression of exact truth curves") {
    SECTION("Case A") {
        const auto pair = compress(true_closure(CaseId::A), 0.0, 1.0);
        CHECK(pair.D.family == Family::poly1);
        CHECK((pair.D.params - vec({0.01, 0.05})).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(pair.R.family == Family::poly2);
        CHECK((pair.R.params - vec({0.0, 1.0, -1.0})).cwiseAbs().maxCoeff() < 1e-8);
        const auto cl = pair.to_closure();
        CHECK(cl.provenance == Provenance::symbolic);
        CHECK_THAT(cl.R(0.5), WithinAbs(0.25, 1e-8));
    }
    SECTION("Case Exp") {
        const auto pair = compress(true_closure(CaseId::Exp), 0.0, 1.0);
        const auto err = closure_error(true_closure(CaseId::Exp), pair.to_closure(), {0.0, 1.0});
        CHECK(err.err_D < 1e-4);
        CHECK(err.err_R < 1e-4);
    }
}

TEST_CASE("expression records") {
    SymbolicExpression e = SymbolicExpression::from(fit_family(unit_grid, 0.1 + 0.2 * unit_grid, Family::poly1));
    std::ostringstream os;
    e.write(os);
    const auto back = SymbolicExpression::read(os.str());
    CHECK(back.family == e.family);
    CHECK((back.params - e.params).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.complexity == e.complexity);
    CHECK(e.formula().find('u') != std::string::npos);
    CHECK_THROWS_AS(SymbolicExpression::read("poly9 1 0.5 1 0"), SchemaError);
    CHECK_THROWS_AS(SymbolicExpression::read("poly1 3 0 0 0 1 0"), SchemaError);
    CHECK(parse_family("u_exp") == Family::u_exp);
}

TEST_CASE("fit argument checks") {
    CHECK_THROWS_AS(fit_family(unit_grid, Eigen::ArrayXd::Zero(3), Family::poly1), Error);
    CHECK_THROWS_AS(fit_family(unit_grid.head(2), unit_grid.head(2), Family::poly4), Error);
}
