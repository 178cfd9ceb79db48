#include <filesystem>
#include <numeric>

#include "cpt/error.hpp"
#include "cpt/label_space.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cpt;

TEST_CASE("modalities get dense ids in registration order") {
  LabelSpace s;
  CHECK(s.register_modality("video").value == 0);
  CHECK(s.register_modality("audio").value == 1);
  CHECK(s.register_modality("image").value == 2);
  CHECK_THROWS_AS(s.register_modality("video"), Error);
  CHECK_THROWS_AS(s.register_modality("Bad Name"), Error);
  CHECK(s.modality("audio").value == 1);
  CHECK_FALSE(s.find_modality("depth"));
}

TEST_CASE("adding labels to an empty block") {
  LabelSpace s;
  const ModalityId v = s.register_modality("video");
  const LabelExtension ext = s.add_labels(v, {"archery", "juggling"});
  CHECK(ext.new_indices == std::vector<std::size_t>{0, 1});
  CHECK(s.size() == 2);
  CHECK(s.label_index(v, "juggling") == 1);
}

TEST_CASE("extension shifts later blocks and reports the remap") {
  LabelSpace s = testing::make_space({{"video", 2}, {"audio", 1}, {"image", 1}});
  const ModalityId a = s.modality("audio");
  const std::string moved = s.label_name(3);
  const LabelExtension ext = s.add_labels(a, {"bark"});
  CHECK(ext.new_indices == std::vector<std::size_t>{3});
  CHECK(ext.remap == std::vector<std::size_t>{0, 1, 2, 4});
  CHECK(s.label_name(4) == moved);
  CHECK(s.label_name(3) == "bark");
  CHECK(s.block(s.modality("image")).start == 4);
}

TEST_CASE("duplicate and empty label names are rejected") {
  LabelSpace s = testing::make_space({{"video", 2}});
  const ModalityId v = s.modality("video");
  CHECK_THROWS_AS(s.add_labels(v, {"video0"}), Error);
  CHECK_THROWS_AS(s.add_labels(v, {"x", "x"}), Error);
  CHECK_THROWS_AS(s.add_labels(v, {""}), Error);
  CHECK(s.size() == 2);
}

TEST_CASE("same label name in two modalities is two labels") {
  LabelSpace s;
  const ModalityId v = s.register_modality("video");
  const ModalityId a = s.register_modality("audio");
  s.add_labels(v, {"dog"});
  s.add_labels(a, {"dog"});
  CHECK(s.size() == 2);
  CHECK(s.label_index(v, "dog") == 0);
  CHECK(s.label_index(a, "dog") == 1);
}

TEST_CASE("block masks") {
  const LabelSpace s = testing::make_space({{"video", 2}, {"audio", 2}, {"image", 1}});
  CHECK(s.block_mask(s.modality("audio")) == std::vector<std::uint8_t>{0, 0, 1, 1, 0});
  CHECK(s.block_mask(s.modality("video")) == std::vector<std::uint8_t>{1, 1, 0, 0, 0});
  std::vector<int> sum(s.size(), 0);
  for (auto m : s.modalities()) {
    const auto mask = s.block_mask(m);
    for (std::size_t i = 0; i < mask.size(); ++i) sum[i] += mask[i];
  }
  CHECK(sum == std::vector<int>(s.size(), 1));
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(s.block(s.owner(i)).contains(i));
}

TEST_CASE("manifest round trip") {
  const LabelSpace s = testing::make_space({{"video", 3}, {"audio", 0}, {"image", 2}});
  const LabelSpace back = LabelSpace::from_manifest_json(s.to_manifest_json());
  CHECK(back == s);

  testing::TempDir dir("labels");
  s.save_manifest(dir / "labels.json");
  CHECK(LabelSpace::load_manifest(dir / "labels.json") == s);
  CHECK_THROWS_WITH_AS(LabelSpace::load_manifest(dir / "missing.json"), doctest::Contains("missing.json"), Error);
  CHECK_THROWS_AS(LabelSpace::from_manifest_json("{\"version\":2,\"modalities\":[]}"), Error);
  CHECK_THROWS_AS(LabelSpace::from_manifest_json("not json"), Error);
}
