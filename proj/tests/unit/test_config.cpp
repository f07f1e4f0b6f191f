#include <doctest.h>

#include "patchda/config.hpp"
#include "patchda/error.hpp"
#include "patchda/io.hpp"
#include "support.hpp"

using namespace patchda;

TEST_CASE("defaults") {
  const Config c;
  CHECK(c.train.lr_glancer == doctest::Approx(0.005));
  CHECK(c.train.lr_focuser == doctest::Approx(0.01));
  CHECK(c.train.lr_policy == doctest::Approx(1e-4));
  CHECK(c.train.lr_adapt == doctest::Approx(3e-3));
  CHECK(c.train.lr_decay == doctest::Approx(0.1));
  CHECK(c.train.lr_milestones == std::vector<int>{10, 20});
  CHECK(c.train.momentum == doctest::Approx(0.9));
  CHECK(c.train.weight_decay == doctest::Approx(5e-4));
  CHECK(c.model.feat_dim == 512);
  CHECK(c.data.verbs == 4);
  CHECK(c.data.nouns == 4);
  CHECK(c.data.frame_size == 64);
  CHECK(c.model.patch_size == 24);
  CHECK(c.data.audio_noise >= 2 * c.data.audio_separation);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("json round trip addresses every field") {
  Config c;
  c.data.train_clips = 17;
  c.data.target.audio_shift = 1.25f;
  c.model.feat_dim = 1024;
  c.model.glance_segments = 4;
  c.model.global_source = GlobalSource::Ingest;
  c.model.feature_dir = "/tmp/features";
  c.train.lr_milestones = {3, 7};
  c.train.weights.gamma = 0.2f;
  c.train.seed = 99;
  const Config back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));
  CHECK(back.model.global_source == GlobalSource::Ingest);
  CHECK(back.train.weights.gamma == doctest::Approx(0.2));
}

TEST_CASE("partial configs keep defaults") {
  const Config c = config_from_json(R"({"train": {"epochs_local": 1}})");
  CHECK(c.train.epochs_local == 1);
  CHECK(c.train.epochs_adapt == 30);
  CHECK(config_from_json("{}").model.feat_dim == 512);
}

TEST_CASE("unknown keys are rejected at every level") {
  CHECK_THROWS_AS(config_from_json(R"({"extra": 1})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"train": {"lr": 0.1}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"train": {"weights": {"lambda": 1}}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"data": {"source": {"hue": 1}}})"), InvalidConfig);
}

TEST_CASE("malformed and invalid configs") {
  CHECK_THROWS_AS(config_from_json("{"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json("[]"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"train": {"epochs_local": "ten"}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"train": {"lr_milestones": [20, 10]}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"train": {"lr_adapt": -1}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"model": {"patch_size": 65}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"model": {"segments": 7}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"model": {"global_source": "ingest"}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"model": {"global_source": "download"}})"), InvalidConfig);
  CHECK_THROWS_AS(config_from_json(R"({"data": {"verbs": 0}})"), InvalidConfig);
}

TEST_CASE("load_config from disk") {
  const auto dir = test::temp_dir("config");
  io::write_text(dir / "c.json", R"({"model": {"feat_dim": 2048}})");
  CHECK(load_config((dir / "c.json").string()).model.feat_dim == 2048);
  CHECK_THROWS_AS(load_config((dir / "missing.json").string()), IoError);
}

TEST_CASE("glance count") {
  ModelConfig m;
  CHECK(glance_count(m) == 6);
  m.glance_segments = 4;
  CHECK(glance_count(m) == 4);
}
