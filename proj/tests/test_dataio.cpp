#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "oracles.hpp"
#include "tempagg/dataio.hpp"
#include "tempagg/error.hpp"

using namespace tempagg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("tempagg_dataio_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FrameFeatureSequence random_features(std::size_t t, std::size_t d, std::uint64_t seed, Modality m) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-3, 3);
  std::vector<float> v(t * d);
  for (auto& x : v) x = u(rng);
  return FrameFeatureSequence::uniform("v", m, 30.0, d, std::move(v));
}

std::vector<std::uint8_t> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(FeatureFile, RoundTripIsBitExact) {
  auto seq = random_features(7, 352, 1, Modality::obj);
  auto bytes = encode_feature_file(seq, 30.0);
  EXPECT_EQ(bytes.size(), kFeatureHeaderBytes + 7 * 352 * 4);
  auto back = decode_feature_file(bytes, "v");
  EXPECT_EQ(back.modality, Modality::obj);
  EXPECT_EQ(back.dim, 352u);
  ASSERT_EQ(back.frames(), 7u);
  EXPECT_EQ(std::memcmp(back.features.data(), seq.features.data(), seq.features.size() * 4), 0);
  EXPECT_EQ(back.timestamps, seq.timestamps);
}

TEST(FeatureFile, HeaderLayout) {
  auto seq = random_features(2, 3, 2, Modality::flow);
  auto b = encode_feature_file(seq, 8.0);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "TAGF");
  EXPECT_EQ(b[4] | b[5] << 8, 1);
  EXPECT_EQ(b[8] | b[9] << 8 | b[10] << 16 | b[11] << 24, 2);
  EXPECT_EQ(b[12] | b[13] << 8 | b[14] << 16 | b[15] << 24, 3);
  float fps;
  std::memcpy(&fps, b.data() + 16, 4);
  EXPECT_EQ(fps, 8.0f);
}

TEST(FeatureFile, DistinctErrorsForCorruption) {
  auto good = encode_feature_file(random_features(4, 5, 3, Modality::rgb), 10.0);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_feature_file(magic, "v"), BadMagicError);

  auto version = good;
  version[4] = 9;
  EXPECT_THROW(decode_feature_file(version, "v"), UnsupportedVersionError);

  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(decode_feature_file(truncated, "v"), TruncatedError);
  EXPECT_THROW(decode_feature_file(std::span(good).first(10), "v"), TruncatedError);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_feature_file(trailing, "v"), ShapeMismatchError);
}

TEST(FeatureFile, EmptySequenceRejectedAtWrite) {
  FrameFeatureSequence empty;
  empty.video_id = "e";
  empty.dim = 4;
  EXPECT_ANY_THROW(encode_feature_file(empty, 10.0));
}

TEST(FeatureFile, DiskRoundTripAndPathLayout) {
  auto dir = scratch("features");
  auto seq = random_features(9, 16, 4, Modality::roi);
  seq.video_id = "P01_01";
  auto path = feature_path(dir, Modality::roi, "P01_01");
  EXPECT_EQ(path, dir / "roi" / "P01_01.tagf");
  write_feature_file(seq, 30.0, path);
  auto [back, fps] = read_feature_file(path);
  EXPECT_EQ(back.video_id, "P01_01");
  EXPECT_EQ(fps, 30.0);
  EXPECT_EQ(back.features, seq.features);
  fs::remove_all(dir);
}

TEST(Annotations, ParsesHeaderDrivenColumns) {
  std::istringstream in(
      "participant_id,video_id,start_sec,stop_sec,verb_class,noun_class,action_class\n"
      "P01,P01_01,1.5,3.25,2,7,40\n"
      "P02,P02_03,0,1,96,299,4024\n");
  auto t = parse_annotations(in, Vocabulary::epic100());
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.rows[0].segment_id, "P01_01_0");
  EXPECT_EQ(t.rows[1].segment_id, "P02_03_1");
  EXPECT_EQ(t.rows[0].start, 1.5);
  EXPECT_EQ(t.rows[1].action, 4024);
  EXPECT_EQ(t.rows[1].participant, "P02");
}

TEST(Annotations, ValidationErrorsCarryLineNumbers) {
  const std::string header = "segment_id,video_id,start_sec,stop_sec,verb_class,noun_class,action_class,participant_id\n";
  auto line_of = [&](const std::string& body) -> std::size_t {
    std::istringstream in(header + body);
    try {
      parse_annotations(in, Vocabulary::epic100());
    } catch (const ValidationError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("a,v,1,2,0,0,0,P1\nb,v,5,4,0,0,0,P1\n"), 3u);       // start >= stop
  EXPECT_EQ(line_of("a,v,1,2,0,0,4025,P1\n"), 2u);                        // action out of range
  EXPECT_EQ(line_of("a,v,1,2,97,0,0,P1\n"), 2u);                          // verb out of range
  EXPECT_EQ(line_of("a,v,x,2,0,0,0,P1\n"), 2u);                           // not a number
  EXPECT_EQ(line_of("a,v,1,2,0,0,0\n"), 2u);                              // missing column
  std::istringstream no_header("video_id,start_sec\n");
  EXPECT_ANY_THROW(parse_annotations(no_header));
}

TEST(Annotations, WriteThenLoadPreservesRows) {
  auto dir = scratch("ann");
  auto data = generate_synthetic({});
  write_annotations(data.annotations, dir / "a.csv");
  auto back = load_annotations(dir / "a.csv");
  ASSERT_EQ(back.size(), data.annotations.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.rows[i].segment_id, data.annotations.rows[i].segment_id);
    EXPECT_EQ(back.rows[i].start, data.annotations.rows[i].start);
    EXPECT_EQ(back.rows[i].stop, data.annotations.rows[i].stop);
    EXPECT_EQ(back.rows[i].action, data.annotations.rows[i].action);
  }
  fs::remove_all(dir);
}

TEST(Subsets, ParseAndRoundTrip) {
  std::istringstream in("# tail lists\nunseen_participants: P07 P09\ntail_verbs: 3 1\n\ntail_actions:\n");
  auto s = parse_subsets(in);
  EXPECT_EQ(*s.unseen_participants, (std::set<std::string>{"P07", "P09"}));
  EXPECT_EQ(*s.tail_verbs, (std::set<int>{1, 3}));
  EXPECT_FALSE(s.tail_nouns.has_value());
  EXPECT_TRUE(s.tail_actions->empty());
  std::istringstream bad("tail_verbs: 1\nwhatever: 2\n");
  try {
    parse_subsets(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  auto dir = scratch("subsets");
  write_subsets(s, dir / "s.txt");
  auto back = load_subsets(dir / "s.txt");
  EXPECT_EQ(back.unseen_participants, s.unseen_participants);
  EXPECT_EQ(back.tail_verbs, s.tail_verbs);
  EXPECT_EQ(back.tail_actions, s.tail_actions);
  fs::remove_all(dir);
}

TEST(Subsets, UnknownParticipantFailsValidation) {
  AnnotationTable t;
  t.rows.push_back({"s", "v", 0, 1, 0, 0, 0, "P01"});
  SubsetLists s;
  s.unseen_participants = std::set<std::string>{"P99"};
  EXPECT_THROW(validate_subsets(s, t), ValidationError);
}

TEST(ActionMap, RoundTripAndDerivedSizes) {
  ActionMap m;
  m.verb_noun = {{0, 0}, {2, 1}, {1, 4}};
  EXPECT_EQ(m.verbs(), 3u);
  EXPECT_EQ(m.nouns(), 5u);
  auto dir = scratch("actions");
  write_action_map(m, dir / "a.csv");
  EXPECT_EQ(load_action_map(dir / "a.csv").verb_noun, m.verb_noun);
  fs::remove_all(dir);
}

TEST(Synthetic, OracleScoresEverySegment) {
  SyntheticSpec spec;
  spec.classes = 10;
  spec.videos = 120;
  spec.seed = 5;
  auto data = generate_synthetic(spec);
  auto sampling = SamplingConfig::epic_anticipation();
  for (const auto& row : data.annotations.rows) {
    const auto& seq = data.sequences[std::stoul(row.video_id.substr(3))];
    ASSERT_EQ(seq.video_id, row.video_id);
    // Max over the observed window [start - 7, start - 1), computed directly.
    const double t = row.start - sampling.anticipation_gap;
    std::vector<float> pooled(data.dim, -1e30f);
    for (std::size_t f = 0; f < seq.frames(); ++f) {
      if (seq.timestamps[f] < t - *sampling.spanning_scope || seq.timestamps[f] >= t) continue;
      for (std::size_t d = 0; d < data.dim; ++d) pooled[d] = std::max(pooled[d], seq.frame(f)[d]);
    }
    ASSERT_EQ(synthetic_oracle(pooled, spec.classes, data.block), row.action) << row.segment_id;
  }
}

TEST(Synthetic, SameSeedSameBytes) {
  auto a = scratch("synth_a"), b = scratch("synth_b");
  SyntheticSpec spec;
  spec.seed = 11;
  spec.modalities = {Modality::rgb, Modality::obj};
  auto ma = write_synthetic(generate_synthetic(spec), a);
  auto mb = write_synthetic(generate_synthetic(spec), b);
  ASSERT_EQ(ma.size(), mb.size());
  EXPECT_EQ(ma.size(), 2 * spec.videos + 5);
  for (std::size_t i = 0; i < ma.size(); ++i) {
    EXPECT_EQ(ma[i].path, mb[i].path);
    EXPECT_EQ(bytes_of(a / ma[i].path), bytes_of(b / mb[i].path)) << ma[i].path;
    EXPECT_EQ(ma[i].checksum, file_checksum(a / ma[i].path));
  }
  spec.seed = 12;
  auto c = scratch("synth_c");
  auto mc = write_synthetic(generate_synthetic(spec), c);
  EXPECT_NE(bytes_of(a / ma[0].path), bytes_of(c / mc[0].path));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(Synthetic, BinaryLabelsAreBalanced) {
  SyntheticSpec spec;
  spec.classes = 2;
  spec.videos = 200;
  spec.seed = 13;
  auto data = generate_synthetic(spec);
  std::size_t ones = 0;
  for (const auto& r : data.annotations.rows) ones += r.action == 1;
  const double frac = static_cast<double>(ones) / static_cast<double>(data.annotations.size());
  EXPECT_NEAR(frac, 0.5, 0.1);
}

TEST(Synthetic, SplitsAndSubsets) {
  SyntheticSpec spec;
  spec.classes = 9;
  spec.videos = 50;
  spec.segments_per_video = 2;
  auto data = generate_synthetic(spec);
  EXPECT_EQ(data.annotations.size(), 100u);
  EXPECT_EQ(data.train_rows, 80u);
  EXPECT_EQ(*data.subsets.unseen_participants, (std::set<std::string>{"P04"}));
  EXPECT_FALSE(data.subsets.tail_actions->empty());
  EXPECT_EQ(data.actions.verbs(), 3u);
  EXPECT_EQ(data.actions.verb_noun[7], (std::pair<int, int>{1, 2}));
  spec.fps = 2;
  EXPECT_THROW(generate_synthetic(spec), ValueError);
}

TEST(Checksum, KnownFnv1aVectors) {
  auto h = [](const std::string& s) {
    return fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
  };
  EXPECT_EQ(h(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(h("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(h("foobar"), 0x85944171f73967e8ULL);
}

TEST(Checkpoint, RoundTripGivesBitIdenticalOutputs) {
  ModelConfig c;
  c.input_dim = 12;
  c.hidden_dim = 16;
  c.repr_dim = 16;
  c.num_classes = 5;
  c.num_recent = 2;
  c.recent_snippets = 2;
  c.spanning_scales = {2, 3};
  Rng rng(14);
  auto m = Model<float>::init(c, rng);
  CheckpointInfo info;
  info.model = c;
  info.epoch = 7;
  info.modality = Modality::flow;
  info.rng_state = rng_state(rng);

  auto dir = scratch("ckpt");
  save_checkpoint(dir / "m.tagc", m, info);
  EXPECT_FALSE(fs::exists(dir / "m.tagc.tmp"));
  CheckpointInfo back_info;
  auto back = load_checkpoint<float>(dir / "m.tagc", &back_info);
  EXPECT_EQ(back_info.epoch, 7u);
  EXPECT_EQ(back_info.modality, Modality::flow);
  EXPECT_EQ(back_info.model.spanning_scales, c.spanning_scales);
  Rng restored = rng_from_state(back_info.rng_state);
  EXPECT_EQ(restored(), rng());

  ModelBatch<float> batch;
  std::uniform_real_distribution<float> u(0, 1);
  auto rand = [&](Shape s) {
    std::vector<float> v(shape_numel(s));
    for (auto& x : v) x = u(rng);
    return Tensor<float>::from(s, v);
  };
  batch.recent = {rand({3, 2, 12}), rand({3, 2, 12})};
  batch.spanning = {rand({3, 2, 12}), rand({3, 3, 12})};
  auto a = m.forward(batch).ensemble_probs, b = back.forward(batch).ensemble_probs;
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)), 0);

  // Loading as double widens every value exactly.
  auto wide = load_checkpoint<double>(dir / "m.tagc");
  auto np = m.named_parameters();
  auto wp = wide.named_parameters();
  ASSERT_EQ(np.size(), wp.size());
  for (std::size_t i = 0; i < np.size(); ++i)
    for (std::size_t j = 0; j < np[i].second.numel(); ++j)
      ASSERT_EQ(static_cast<double>(np[i].second.data()[j]), wp[i].second.data()[j]);

  auto bytes = bytes_of(dir / "m.tagc");
  bytes[0] = 'X';
  std::ofstream(dir / "bad.tagc", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                         static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(load_checkpoint<float>(dir / "bad.tagc"), BadMagicError);
  bytes[0] = 'T';
  bytes.resize(bytes.size() - 3);
  std::ofstream(dir / "short.tagc", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                           static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(load_checkpoint<float>(dir / "short.tagc"), TruncatedError);
  fs::remove_all(dir);
}
