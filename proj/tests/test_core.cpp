#include <catch2/catch_amalgamated.hpp>

#include "rydopt/core.hpp"

using namespace rydopt;
using Catch::Approx;

TEST_CASE("parameter set stores scalars and vectors in insertion order", "[core]") {
  ParameterSet p;
  p.set_scalar("omega", 3.5, true, {{0.0, 10.0}});
  Eigen::VectorXd v(3);
  v << 1.0, 2.0, 3.0;
  p.set("controls", v, true);
  p.set_scalar("frozen", -2.0, false);

  REQUIRE(p.size() == 3);
  REQUIRE(p.contains("omega"));
  REQUIRE_FALSE(p.contains("missing"));
  REQUIRE(p.scalar("omega") == Approx(3.5));
  REQUIRE(p.at("controls").value[1] == Approx(2.0));
  REQUIRE(p.names() == std::vector<std::string>{"omega", "controls", "frozen"});
  REQUIRE(p.trainable_names() == std::vector<std::string>{"omega", "controls"});

  p.set_scalar("omega", 4.0, true);  // overwrite keeps position
  REQUIRE(p.scalar("omega") == Approx(4.0));
  REQUIRE(p.names().front() == "omega");
  REQUIRE(p.size() == 3);
}

TEST_CASE("unknown parameter lookups fail by name", "[core]") {
  ParameterSet p;
  REQUIRE_THROWS_WITH(p.at("ghost"), Catch::Matchers::ContainsSubstring("ghost"));
  REQUIRE_THROWS_AS(p.scalar("ghost"), std::invalid_argument);
}

TEST_CASE("constraint boxes reject min > max", "[core]") {
  ParameterSet p;
  REQUIRE_THROWS_AS(p.set_scalar("bad", 0.0, true, {{1.0, -1.0}}), std::invalid_argument);
}

TEST_CASE("clamp projects constrained entries and leaves the rest alone", "[core]") {
  ParameterSet p;
  Eigen::VectorXd v(4);
  v << -5.0, 0.5, 2.0, 99.0;
  p.set("boxed", v, true, {{0.0, 2.0}});
  p.set_scalar("free", -123.0, true);
  p.set_scalar("frozen_boxed", 7.0, false, {{0.0, 1.0}});

  ParameterSet c = clamp_to_constraints(p);
  REQUIRE(c.at("boxed").value[0] == Approx(0.0));
  REQUIRE(c.at("boxed").value[1] == Approx(0.5));
  REQUIRE(c.at("boxed").value[2] == Approx(2.0));
  REQUIRE(c.at("boxed").value[3] == Approx(2.0));
  REQUIRE(c.scalar("free") == Approx(-123.0));
  REQUIRE(c.scalar("frozen_boxed") == Approx(1.0));
  REQUIRE(c.at("boxed").trainable);
  REQUIRE_FALSE(c.at("frozen_boxed").trainable);
  // idempotent
  ParameterSet c2 = clamp_to_constraints(c);
  REQUIRE(c2.at("boxed").value == c.at("boxed").value);
  // source untouched
  REQUIRE(p.at("boxed").value[0] == Approx(-5.0));
}

TEST_CASE("register rejects duplicate and coincident atoms", "[core]") {
  Register reg;
  reg.add("a", 0.0, 0.0);
  REQUIRE_THROWS_WITH(reg.add("a", 1.0, 1.0), Catch::Matchers::ContainsSubstring("a"));
  reg.add("b", 0.0, 0.0);
  REQUIRE_THROWS_AS(reg.validate(), std::invalid_argument);
}

TEST_CASE("linear layout places atoms on a line at the given spacing", "[core]") {
  Register reg = build_register(Layout::linear, 6.5, 3);
  REQUIRE(reg.n() == 3);
  REQUIRE(reg.atoms()[0].x == Approx(0.0));
  REQUIRE(reg.atoms()[1].x == Approx(6.5));
  REQUIRE(reg.atoms()[2].x == Approx(13.0));
  for (const auto& a : reg.atoms()) REQUIRE(a.y == Approx(0.0));
  REQUIRE(reg.atoms()[0].name == "q0");
}

TEST_CASE("rectangular layout is a row-major grid", "[core]") {
  Register reg = build_register(Layout::rectangular, 7.0, 6, 2, 3);
  REQUIRE(reg.n() == 6);
  REQUIRE(reg.atoms()[4].x == Approx(7.0));   // row 1, col 1
  REQUIRE(reg.atoms()[4].y == Approx(7.0));
  REQUIRE(reg.atoms()[2].x == Approx(14.0));  // row 0, col 2
  REQUIRE(reg.atoms()[2].y == Approx(0.0));
  REQUIRE_THROWS_AS(build_register(Layout::rectangular, 7.0, 6, 2, 2),
                    std::invalid_argument);
}

TEST_CASE("triangular layout keeps nearest neighbors at the lattice constant", "[core]") {
  Register reg = build_register(Layout::triangular, 7.0, 6);
  Eigen::MatrixXd d = pairwise_distances(reg);
  double dmin = 1e9;
  for (int i = 0; i < reg.n(); ++i)
    for (int j = i + 1; j < reg.n(); ++j) dmin = std::min(dmin, d(i, j));
  REQUIRE(dmin == Approx(7.0));
}

TEST_CASE("negative spacing is rejected by name", "[core]") {
  REQUIRE_THROWS_WITH(build_register(Layout::linear, -1.0, 2),
                      Catch::Matchers::ContainsSubstring("spacing"));
}

TEST_CASE("pairwise distances are symmetric with zero diagonal", "[core]") {
  Register reg = build_register(Layout::rectangular, 5.0, 4, 2, 2);
  Eigen::MatrixXd d = pairwise_distances(reg);
  REQUIRE(d(0, 0) == 0.0);
  REQUIRE(d(0, 3) == Approx(d(3, 0)));
  REQUIRE(d(0, 3) == Approx(5.0 * std::sqrt(2.0)));
}

TEST_CASE("layout names round-trip", "[core]") {
  for (Layout l : {Layout::linear, Layout::rectangular, Layout::triangular})
    REQUIRE(layout_from_string(layout_to_string(l)) == l);
  REQUIRE(layout_from_string("rect") == Layout::rectangular);
  REQUIRE_THROWS_AS(layout_from_string("ring"), std::invalid_argument);
}

TEST_CASE("device spec validates its limits", "[core]") {
  DeviceSpec dev;
  REQUIRE_NOTHROW(dev.validate());
  REQUIRE(dev.max_amp == Approx(4.0 * kPi));
  REQUIRE(dev.c6 == Approx(865723.02));
  dev.max_amp = 0.0;
  REQUIRE_THROWS_AS(dev.validate(), std::invalid_argument);
  DeviceSpec dev2;
  dev2.c6 = -1.0;
  REQUIRE_THROWS_AS(dev2.validate(), std::invalid_argument);
}
