#include "doctest.h"
#include "ewe/config.hpp"

using namespace ewe;

TEST_CASE("flat key=value parsing") {
    Config c = Config::from_string(
        "# comment\n"
        "seed = 42\n"
        "kappa=8.5   # trailing comment\n"
        "name = ewe run\n"
        "flag = true\n"
        "\n");
    CHECK(c.get_int("seed", 0) == 42);
    CHECK(c.get_double("kappa", 0) == doctest::Approx(8.5));
    CHECK(c.get_str("name", "") == "ewe run");
    CHECK(c.get_bool("flag", false));
    CHECK(c.get_int("missing", 7) == 7);
    CHECK_THROWS_AS(c.require_str("missing"), ContractError);
}

TEST_CASE("malformed lines and duplicates are rejected") {
    CHECK_THROWS_AS(Config::from_string("not a pair\n"), ContractError);
    CHECK_THROWS_AS(Config::from_string("= value\n"), ContractError);
    CHECK_THROWS_AS(Config::from_string("a = 1\na = 2\n"), ContractError);
    Config c = Config::from_string("x = abc\n");
    CHECK_THROWS_AS(c.get_int("x", 0), ContractError);
    CHECK_THROWS_AS(c.get_bool("x", false), ContractError);
}

TEST_CASE("unknown keys fail closed") {
    Config c = Config::from_string("seed = 1\ntypo_key = 2\n");
    CHECK_THROWS_AS(c.restrict_keys({"seed"}), ContractError);
    try {
        c.restrict_keys({"seed"});
    } catch (const ContractError& e) {
        CHECK(std::string(e.what()).find("typo_key") != std::string::npos);
    }
}
