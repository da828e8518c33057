#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "mpe/config.hpp"

TEST_CASE("key-value parsing with comments and whitespace") {
  std::istringstream is(
      "# run settings\n"
      "learning_rate = 1e-3\n"
      "epochs=5   # trailing comment\n"
      "\n"
      "candidate_bits = 0, 1, 2, 3\n"
      "out_dir = runs/a b\n");
  auto cfg = mpe::KeyValueConfig::parse(is);
  REQUIRE(cfg.get_double("learning_rate", 0.0) == 1e-3);
  REQUIRE(cfg.get_int("epochs", 0) == 5);
  REQUIRE(cfg.get_int_list("candidate_bits", {}) == std::vector<int>{0, 1, 2, 3});
  REQUIRE(cfg.get_string("out_dir", "") == "runs/a b");
  REQUIRE(cfg.get_double("missing", 0.25) == 0.25);
}

TEST_CASE("malformed config lines are rejected") {
  SECTION("missing equals") {
    std::istringstream is("just_a_key\n");
    REQUIRE_THROWS_WITH(mpe::KeyValueConfig::parse(is),
                        Catch::Matchers::ContainsSubstring("line 1"));
  }
  SECTION("duplicate key") {
    std::istringstream is("a = 1\na = 2\n");
    REQUIRE_THROWS_WITH(mpe::KeyValueConfig::parse(is),
                        Catch::Matchers::ContainsSubstring("duplicate"));
  }
  SECTION("bad number") {
    std::istringstream is("a = abc\n");
    auto cfg = mpe::KeyValueConfig::parse(is);
    REQUIRE_THROWS_WITH(cfg.get_double("a", 0.0), Catch::Matchers::ContainsSubstring("not a number"));
  }
}

TEST_CASE("unknown keys are rejected against an allow list") {
  std::istringstream is("learning_rate = 1e-3\ntypo_key = 7\n");
  auto cfg = mpe::KeyValueConfig::parse(is);
  REQUIRE_THROWS_WITH(cfg.reject_unknown_keys({"learning_rate", "epochs"}),
                      Catch::Matchers::ContainsSubstring("typo_key"));
  REQUIRE_NOTHROW(cfg.reject_unknown_keys({"learning_rate", "typo_key"}));
}

TEST_CASE("serialized config reparses to the same values") {
  std::istringstream is("b = two\na = 1\nseed = 42\n");
  auto cfg = mpe::KeyValueConfig::parse(is);
  std::ostringstream out;
  cfg.serialize(out);
  std::istringstream back(out.str());
  auto cfg2 = mpe::KeyValueConfig::parse(back);
  REQUIRE(cfg2.values() == cfg.values());
}
