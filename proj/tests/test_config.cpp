#include <doctest.h>

#include "condisr/config.hpp"

using namespace condisr;

TEST_CASE("empty config resolves to all defaults") {
  std::vector<std::string> errors;
  Config cfg = Config::from_string("", &errors);
  CHECK(errors.empty());
  CHECK(cfg.get_real("model.tau") == doctest::Approx(0.1));
  CHECK(cfg.get_int("train.batch_size") == 256);
  CHECK(cfg.get_int("train.epochs") == 50);
  CHECK(cfg.get_real("train.lr") == doctest::Approx(1e-3));
  CHECK(cfg.get_string("train.seeds") == "0,1,2");
  CHECK(cfg.get_int("model.stem_channels") == 64);
  CHECK(cfg.get_int("model.proj_dim") == 128);
}

TEST_CASE("constraint violations name the key and constraint") {
  std::vector<std::string> errors;
  Config::from_string("model.tau = -1\n", &errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("model.tau") != std::string::npos);
  CHECK(errors[0].find("> 0") != std::string::npos);
}

TEST_CASE("unknown keys get a nearest-key suggestion") {
  std::vector<std::string> errors;
  Config::from_string("model.taau = 0.2\n", &errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("model.taau") != std::string::npos);
  CHECK(errors[0].find("model.tau") != std::string::npos);
}

TEST_CASE("every violation is collected, not only the first") {
  std::vector<std::string> errors;
  Config::from_string("model.tau = -1\ntrain.lr = 0\nmodel.kind = vgg\n", &errors);
  CHECK(errors.size() == 3);
}

TEST_CASE("resolved output is reparseable and stable") {
  Config cfg = Config::from_string("model.tau = 0.25\n# comment\n");
  std::string dump = cfg.resolved();
  Config cfg2 = Config::from_string(dump);
  CHECK(cfg2.get_real("model.tau") == doctest::Approx(0.25));
  CHECK(cfg2.resolved() == dump);
}

TEST_CASE("cross-key validation catches inverted fda range") {
  std::vector<std::string> errors;
  Config::from_string("aug.fda.beta_min = 0.3\naug.fda.beta_max = 0.1\n", &errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("beta_min") != std::string::npos);
}

TEST_CASE("enum and type errors are reported with expected values") {
  std::vector<std::string> errors;
  Config::from_string("loss.style_mode = soft\n", &errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("literal") != std::string::npos);
  errors.clear();
  Config::from_string("train.batch_size = many\n", &errors);
  REQUIRE(errors.size() == 1);
  CHECK(errors[0].find("integer") != std::string::npos);
}
