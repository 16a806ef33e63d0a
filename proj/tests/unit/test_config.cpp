#include "doctest.h"
#include "survpfn/config.hpp"
#include "survpfn/errors.hpp"

using namespace survpfn;

TEST_CASE("config sections map onto structs") {
  const auto c = Config::parse(R"(
seed = 5
[prior]
preset = "simple_exponential"
max_rate = 0.4
[model]
width = 32
heads = 4
bins = 16
ffn = 64
d_max = 2
[train]
steps = 50
loss = "sce"
schedule = "both"
transform = "time2quantile"
)");
  const TrainConfig t = train_config_from(c);
  CHECK(t.steps == 50);
  CHECK(t.loss == LossKind::sce);
  CHECK(t.schedule == QuerySchedule::both);
  CHECK(t.transform == TransformKind::time2quantile);
  CHECK(t.model.width == 32);
  CHECK(t.model.heads == 4);
  CHECK(t.prior.family == PriorFamily::exponential);
  CHECK(t.prior.max_rate == 0.4);
  CHECK(c.get_int("seed") == 5);
  CHECK_FALSE(c.has("train.seed"));
}

TEST_CASE("environment overrides win over the file") {
  const EnvList env{{"SURVPFN_TRAIN__STEPS", "7"},
                    {"SURVPFN_TRAIN__LEARNING_RATE", "0.01"},
                    {"SURVPFN_PRIOR__FAMILY", "mixture"},
                    {"SURVPFN_OUT", "runs/x"}};
  const auto c = Config::parse("[train]\nsteps = 100\n", "<test>", env);
  CHECK(c.get_size("train.steps") == 7);
  CHECK(c.get_double("train.learning_rate") == 0.01);
  CHECK(c.get_string("prior.family") == "mixture");
  CHECK(c.get_string("out") == "runs/x");
  CHECK(prior_config_from(c).family == PriorFamily::mixture);
}

TEST_CASE("config errors") {
  try {
    Config::parse("[train]\nsteps = = 3\n", "bad.toml");
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bad.toml:2") != std::string::npos);
  }
  CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nstpes = 3\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nsteps = \"many\"\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nloss = \"mse\"\n")), ConfigError);
  CHECK_THROWS_AS(model_config_from(Config::parse("[model]\nwidth = 30\nheads = 4\n")), ConfigError);
  CHECK_THROWS_AS(train_config_from(Config::parse("[train]\nmin_context = 2\n")), ConfigError);
}
