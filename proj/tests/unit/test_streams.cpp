#include <doctest.h>

#include "patchda/error.hpp"
#include "patchda/io.hpp"
#include "patchda/streams.hpp"
#include "support.hpp"

using namespace patchda;
using namespace patchda::streams;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.segments = 6;
  return m;
}

}  // namespace

TEST_CASE("glance shape, determinism and zero input") {
  std::mt19937_64 rng(1);
  const StreamNetworks net(Stream::Spatial, small_model(), rng);
  const Tensor frames = test::random_tensor({6, 3, 64, 64}, 2, false, 0.0f, 1.0f);
  const Tensor maps = net.glance(frames);
  CHECK(maps.shape() == Shape{6, 16, 8, 8});

  std::vector<float> twin(frames.values().begin(), frames.values().begin() + 3 * 64 * 64);
  twin.insert(twin.end(), twin.begin(), twin.end());
  const Tensor pair = net.glance(Tensor::from({2, 3, 64, 64}, twin));
  const std::size_t per = 16 * 8 * 8;
  for (std::size_t i = 0; i < per; ++i) CHECK(pair.values()[i] == pair.values()[per + i]);

  const Tensor zeros = net.glance(Tensor::zeros({2, 3, 64, 64}));
  const Tensor zero_one = net.glance(Tensor::zeros({1, 3, 64, 64}));
  for (std::size_t i = 0; i < per; ++i) {
    CHECK(zeros.values()[i] == zeros.values()[per + i]);
    CHECK(zeros.values()[i] == zero_one.values()[i]);
  }
  CHECK_THROWS_AS(net.glance(Tensor::zeros({1, 2, 64, 64})), InvalidInput);
}

TEST_CASE("select_patch stays inside the unit square") {
  std::mt19937_64 rng(3);
  const StreamNetworks net(Stream::Temporal, small_model(), rng);
  const Tensor maps = test::random_tensor({5, 16, 8, 8}, 4, false, -20.0f, 20.0f);
  const Tensor centers = net.select_patch(maps);
  REQUIRE(centers.shape() == Shape{5, 2});
  for (float v : centers.values()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  const Tensor again = net.select_patch(maps);
  for (std::size_t i = 0; i < centers.numel(); ++i) CHECK(centers.values()[i] == again.values()[i]);
}

TEST_CASE("soft-argmax value and gradient") {
  const Tensor uniform = Tensor::zeros({1, 16});
  const Tensor c = soft_argmax(uniform, 4, 4, 1.0f);
  CHECK(c.values()[0] == doctest::Approx(0.5));
  CHECK(c.values()[1] == doctest::Approx(0.5));
  std::vector<float> peak(16, -50.0f);
  peak[1 * 4 + 3] = 50.0f;
  const Tensor p = soft_argmax(Tensor::from({1, 16}, peak), 4, 4, 1.0f);
  CHECK(p.values()[0] == doctest::Approx(3.5 / 4));
  CHECK(p.values()[1] == doctest::Approx(1.5 / 4));
  const Tensor scores = test::random_tensor({3, 12}, 5);
  CHECK(test::grad_check(scores, [&] { return soft_argmax(scores, 3, 4, 0.5f); }) < 1e-2);
}

TEST_CASE("focus shape, duplication and patch-size check") {
  std::mt19937_64 rng(6);
  const StreamNetworks net(Stream::Spatial, small_model(), rng);
  const Tensor patches = test::random_tensor({6, 3, 24, 24}, 7, false);
  const Tensor f = net.focus(patches);
  CHECK(f.shape() == Shape{6, 32});
  std::vector<float> dup(patches.values().begin(), patches.values().begin() + 3 * 24 * 24);
  dup.insert(dup.end(), dup.begin(), dup.end());
  const Tensor fd = net.focus(Tensor::from({2, 3, 24, 24}, dup));
  for (int k = 0; k < 32; ++k) CHECK(fd.values()[k] == doctest::Approx(fd.values()[32 + k]).epsilon(1e-6));
  CHECK_THROWS_AS(net.focus(Tensor::zeros({1, 3, 20, 20})), InvalidInput);
}

TEST_CASE("policy parameters receive gradient through the crop") {
  std::mt19937_64 rng(8);
  const StreamNetworks net(Stream::Spatial, small_model(), rng);
  const Tensor frames = test::random_tensor({4, 3, 64, 64}, 9, false, 0.0f, 1.0f);
  const Tensor centers = net.select_patch(net.glance(frames));
  const Tensor local = net.focus(sampler::crop_patches(frames, centers, 24));
  ops::sum(local).backward();
  nn::NamedTensors policy;
  net.collect_policy("p", policy);
  double norm = 0;
  for (const auto& [n, t] : policy)
    for (float g : t.grad()) norm += double(g) * g;
  CHECK(norm > 0.0);
  nn::NamedTensors glancer;
  net.collect_glancer("g", glancer);
  CHECK(nn::parameter_count(glancer) > 0);
}

TEST_CASE("encode_global shape") {
  std::mt19937_64 rng(10);
  const StreamNetworks net(Stream::Temporal, small_model(), rng);
  CHECK(net.encode_global(Tensor::zeros({6, 2, 64, 64})).shape() == Shape{6, 64});
}

TEST_CASE("fusion layout and fuse") {
  const auto layout = FusionLayout::from_config(small_model(), 16);
  CHECK(layout.total == 208);
  CHECK(layout.offsets == std::array<int, kBlockCount>{0, 64, 96, 160, 192});

  std::array<std::optional<Tensor>, kBlockCount> blocks;
  const int clips = 2, segs = 3;
  for (int b = 0; b < kBlockCount; ++b)
    blocks[b] = test::random_tensor({b == kAudio ? clips : clips * segs, layout.dims[b]}, 20 + b, false);
  const auto fused = fuse(blocks, layout, clips, segs);
  REQUIRE(fused.e.shape() == Shape{clips * segs, 208});
  for (int b = 0; b < kBlockCount; ++b) {
    const Tensor back = ops::slice_cols(fused.e, layout.offsets[b], layout.dims[b]);
    for (int r = 0; r < clips * segs; ++r) {
      const int src = b == kAudio ? r / segs : r;
      for (int k = 0; k < layout.dims[b]; ++k)
        CHECK(back.values()[r * layout.dims[b] + k] == blocks[b]->values()[src * layout.dims[b] + k]);
    }
  }

  std::array<std::optional<Tensor>, kBlockCount> zeros;
  for (int b = 0; b < kBlockCount; ++b) zeros[b] = Tensor::zeros({b == kAudio ? clips : clips * segs, layout.dims[b]});
  const auto fused_zero = fuse(zeros, layout, clips, segs);
  for (float v : fused_zero.e.values()) CHECK(v == 0.0f);

  auto missing = blocks;
  missing[kTemporalLocal].reset();
  CHECK_THROWS_AS(fuse(missing, layout, clips, segs), InvalidInput);

  auto global_only = small_model();
  global_only.use_local = false;
  const auto g = FusionLayout::from_config(global_only, 16);
  CHECK(g.total == 144);
  CHECK_THROWS_AS(fuse(blocks, g, clips, segs), InvalidInput);
}

TEST_CASE("D_e additivity across configurations") {
  for (int gd : {16, 64, 512})
    for (int ld : {8, 32})
      for (int ad : {1, 16}) {
        ModelConfig m;
        m.global_dim = gd;
        m.local_dim = ld;
        const auto l = FusionLayout::from_config(m, ad);
        CHECK(l.total == 2 * gd + 2 * ld + ad);
      }
}

TEST_CASE("segment and glance indices") {
  CHECK(segment_indices(6, 6) == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK(segment_indices(12, 6) == std::vector<int>{1, 3, 5, 7, 9, 11});
  CHECK(glance_indices(6, 4) == std::vector<int>{0, 2, 3, 5});
  CHECK(nearest_glanced(6, 4) == std::vector<int>{0, 0, 1, 2, 2, 3});
  CHECK(nearest_glanced(6, 6) == std::vector<int>{0, 1, 2, 3, 4, 5});
  CHECK_THROWS_AS(segment_indices(4, 6), InvalidConfig);
}

TEST_CASE("extractor forward with fewer glanced frames") {
  ModelConfig m = small_model();
  m.glance_segments = 4;
  std::mt19937_64 rng(11);
  const TwoStreamExtractor ex(m, 16, rng);
  ClipBatch batch;
  batch.clips = 2;
  batch.segments = 6;
  batch.rgb = test::random_tensor({12, 3, 64, 64}, 12, false, 0.0f, 1.0f);
  batch.flow = test::random_tensor({12, 2, 64, 64}, 13, false);
  batch.audio = test::random_tensor({2, 16}, 14, false);
  const auto out = ex.forward(batch);
  CHECK(out.features.e.shape() == Shape{12, 208});
  REQUIRE(out.spatial_centers.shape() == Shape{12, 2});
  // glanced frames {0,2,3,5}: segments 0,1 share frame 0 and 3,4 share frame 3 (ties go earlier).
  const auto c = out.spatial_centers.values();
  CHECK(c[0] == c[2]);
  CHECK(c[1] == c[3]);
  CHECK(c[6] == c[8]);
  CHECK(c[7] == c[9]);
  CHECK(c[8] != c[10]);
  batch.segments = 5;
  CHECK_THROWS_AS(ex.forward(batch), InvalidInput);
}

TEST_CASE("feature ingestion") {
  const auto dir = test::temp_dir("ingest");
  std::vector<float> rgb(6 * 512);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = 0.001f * static_cast<float>(i);
  io::write_feature_file(dir / "c1.rgb.feat", "c1", 6, 512, rgb);
  const FeatureStore store(dir, 6, 512, 512, 16);
  CHECK(store.load_precomputed("c1", "rgb") == rgb);

  io::write_feature_file(dir / "c2.rgb.feat", "c2", 6, 512, rgb);
  auto bytes = io::read_bytes(dir / "c2.rgb.feat");
  bytes.resize(bytes.size() - 512 * 4);
  io::write_bytes(dir / "c2.rgb.feat", bytes);
  try {
    store.load_precomputed("c2", "rgb");
    FAIL("expected IngestionError");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("c2") != std::string::npos);
  }

  io::write_feature_file(dir / "c3.flow.feat", "c3", 6, 256, std::vector<float>(6 * 256));
  CHECK_THROWS_AS(store.load_precomputed("c3", "flow"), IngestionError);
  CHECK_THROWS_AS(store.load_precomputed("missing", "rgb"), IngestionError);
  std::vector<float> bad(6 * 512, 0.0f);
  bad[7] = NAN;
  io::write_feature_file(dir / "c4.rgb.feat", "c4", 6, 512, bad);
  CHECK_THROWS_AS(store.load_precomputed("c4", "rgb"), IngestionError);
  io::write_feature_file(dir / "c5.audio.feat", "c5", 1, 16, std::vector<float>(16, 1.0f));
  CHECK(store.load_precomputed("c5", "audio").size() == 16);
  CHECK_THROWS_AS(FeatureStore(dir / "nope", 6, 512, 512, 16), IngestionError);
}

TEST_CASE("ingest mode extractor") {
  const auto dir = test::temp_dir("ingest_model");
  ModelConfig m = small_model();
  m.global_source = GlobalSource::Ingest;
  m.global_dim = 512;
  m.feature_dir = dir.string();
  for (const char* id : {"a", "b"}) {
    io::write_feature_file(dir / (std::string(id) + ".rgb.feat"), id, 6, 512, std::vector<float>(6 * 512, 0.5f));
    io::write_feature_file(dir / (std::string(id) + ".flow.feat"), id, 6, 512, std::vector<float>(6 * 512, -0.5f));
    io::write_feature_file(dir / (std::string(id) + ".audio.feat"), id, 1, 16, std::vector<float>(16, 2.0f));
  }
  std::mt19937_64 rng(15);
  const TwoStreamExtractor ex(m, 16, rng);
  const FeatureStore store(dir, 6, 512, 512, 16);
  ClipBatch batch;
  batch.clips = 2;
  batch.segments = 6;
  batch.rgb = test::random_tensor({12, 3, 64, 64}, 16, false, 0.0f, 1.0f);
  batch.flow = test::random_tensor({12, 2, 64, 64}, 17, false);
  batch.audio = Tensor::zeros({2, 16});
  batch.clip_ids = {"a", "b"};
  const auto out = ex.forward(batch, &store);
  CHECK(out.features.e.shape() == Shape{12, 512 + 32 + 512 + 32 + 16});
  CHECK(out.features.e.values()[0] == 0.5f);
  CHECK(out.features.e.values()[1088] == 2.0f);
  CHECK(out.features.e.values()[1103] == 2.0f);
  CHECK_THROWS_AS(ex.forward(batch), InvalidConfig);
  CHECK(ex.global_parameters().empty());
}
