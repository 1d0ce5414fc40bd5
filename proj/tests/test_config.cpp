#include <gtest/gtest.h>

#include "needle/pipeline_config.hpp"
#include "needle/scene_config.hpp"

using namespace needle;

TEST(SceneConfig, ParsesLayersAndOverrides) {
  const auto f = mechanics::parse_scene_json(R"({
    "name": "stack", "sample_rate_hz": 20, "seed": 9,
    "layers": [{"type": "cavity", "length": 2.5},
               {"type": "tissue", "tissue": "kidney", "a1": 0.2, "thickness": 12}],
    "motion": [{"velocity": 2.0, "duration": 3.0}, {"velocity": 0.0, "duration": 1.0}]})");
  EXPECT_EQ(f.scene.name, "stack");
  EXPECT_EQ(*f.seed, 9u);
  ASSERT_EQ(f.scene.layers.size(), 2u);
  EXPECT_DOUBLE_EQ(std::get<mechanics::Cavity>(f.scene.layers[0]).length, 2.5);
  const auto& p = std::get<mechanics::TissueProfile>(f.scene.layers[1]);
  EXPECT_EQ(p.tissue, TissueType::Kidney);
  EXPECT_DOUBLE_EQ(p.a1, 0.2);
  EXPECT_DOUBLE_EQ(p.a2, mechanics::default_profile(TissueType::Kidney).a2);
  EXPECT_DOUBLE_EQ(p.thickness, 12.0);
  EXPECT_EQ(f.motion.sample_velocities().size(), 80u);
}

TEST(SceneConfig, RoundTrip) {
  const auto f = mechanics::load_scene_file(std::string(NEEDLE_SOURCE_DIR) + "/configs/belly_liver.json");
  const auto again = mechanics::parse_scene_json(mechanics::scene_to_json(f));
  EXPECT_EQ(mechanics::scene_to_json(f), mechanics::scene_to_json(again));
  EXPECT_EQ(again.scene.layers.size(), 4u);
}

TEST(SceneConfig, ShippedScenesLoad) {
  for (const char* name : {"liver.json", "heart.json", "belly_liver.json"}) {
    EXPECT_NO_THROW(mechanics::load_scene_file(std::string(NEEDLE_SOURCE_DIR) + "/configs/" + name)) << name;
  }
}

TEST(SceneConfig, Errors) {
  EXPECT_THROW(mechanics::parse_scene_json("{"), std::invalid_argument);
  EXPECT_THROW(mechanics::parse_scene_json(R"({"layers": 3})"), std::invalid_argument);
  EXPECT_THROW(mechanics::parse_scene_json(R"({"layers": [{"type": "bone"}]})"), std::invalid_argument);
  EXPECT_THROW(mechanics::parse_scene_json(R"({"layers": [{"tissue": "spleen"}]})"), std::invalid_argument);
  EXPECT_THROW(mechanics::parse_scene_json(R"({"layers": [{"tissue": "liver", "a1": "x"}]})"),
               std::invalid_argument);
  EXPECT_THROW(mechanics::parse_scene_json(R"({"layers": [{"type": "cavity", "length": -1}]})"),
               std::invalid_argument);
  EXPECT_THROW(mechanics::load_scene_file("/nonexistent/scene.json"), std::runtime_error);
}

TEST(PipelineConfig, DefaultsAndOverrides) {
  const auto d = parse_pipeline_config("{}");
  EXPECT_EQ(d.folds, 5);
  EXPECT_EQ(d.synthesis.filter.order, 6);
  EXPECT_DOUBLE_EQ(d.synthesis.filter.cutoff_hz, 5.0);
  EXPECT_EQ(d.augment.windows_per_frame, 40);
  EXPECT_EQ(d.model, model::desk_config());
  const auto c = parse_pipeline_config(R"({
    "synthesis": {"frames": 50, "tissues": ["liver", "Heart"], "noise_std": 0.02},
    "filter": {"order": 4, "cutoff_hz": 3},
    "model": {"num_blocks": 2},
    "train": {"epochs": 2, "precision": "double", "clip_norm": 1.5},
    "stream": {"budget_ms": 5, "decimation": 2}})");
  EXPECT_EQ(c.synthesis.frames, 50);
  ASSERT_EQ(c.synthesis.tissues.size(), 2u);
  EXPECT_EQ(c.synthesis.tissues[1], TissueType::Heart);
  EXPECT_DOUBLE_EQ(*c.synthesis.noise_std, 0.02);
  EXPECT_EQ(c.synthesis.filter.order, 4);
  EXPECT_EQ(c.model.num_blocks, 2);
  EXPECT_EQ(c.train.precision, model::Precision::Double);
  EXPECT_DOUBLE_EQ(*c.train.clip_norm, 1.5);
  EXPECT_EQ(c.stream_options().decimation, 2);
  EXPECT_EQ(c.stream_options().filter.order, 4);
}

TEST(PipelineConfig, RoundTrip) {
  auto c = parse_pipeline_config(R"({"train": {"epochs": 7, "seed": 3}, "split": {"folds": 4}})");
  const auto again = parse_pipeline_config(pipeline_config_to_json(c));
  EXPECT_EQ(pipeline_config_to_json(c), pipeline_config_to_json(again));
  EXPECT_EQ(again.train.epochs, 7);
  EXPECT_EQ(again.folds, 4);
}

TEST(PipelineConfig, RejectsUnknownAndInvalid) {
  EXPECT_THROW(parse_pipeline_config(R"({"optimizer": {}})"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config(R"({"train": {"epoch": 3}})"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config(R"({"train": {"epochs": "three"}})"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config(R"({"train": {"precision": "half"}})"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config(R"({"filter": {"cutoff_hz": 12}})"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config(R"({"model": {"head_dim": 5}})"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config(R"({"stream": {"budget_ms": 0}})"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config("[1]"), std::invalid_argument);
  EXPECT_THROW(parse_pipeline_config("{not json"), std::invalid_argument);
  try {
    parse_pipeline_config(R"({"augment": {"windows": 3}})");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("augment.windows"), std::string::npos);
  }
}
