#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "scribeid/errors.hpp"
#include "scribeid/evaluation.hpp"
#include "scribeid/synth.hpp"
#include "test_support.hpp"

namespace scribeid {
namespace {

using testing::random_tensor;

TEST(TestSamples, ZipShuffledCells) {
  CellIndex cells(3, std::vector<std::vector<int>>(2));
  for (int w = 0; w < 3; ++w)
    for (int l = 0; l < 2; ++l)
      for (int i = 0; i < 4 + l + w; ++i) cells[w][l].push_back(100 * w + 10 * l + i);
  const auto s = test_samples(cells, {0, 1}, {0, 2}, 9);
  ASSERT_EQ(s.size(), 4u + 6u);
  std::set<int> used;
  for (const Sample& x : s) {
    ASSERT_EQ(x.records.size(), 2u);
    for (int k = 0; k < 2; ++k) {
      EXPECT_EQ(x.records[k] / 10, 10 * x.writer + k);
      EXPECT_TRUE(used.insert(x.records[k]).second);
    }
  }
  const auto again = test_samples(cells, {0, 1}, {0, 2}, 9);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i].records, again[i].records);
}

TEST(RankOf, StrictOrderAndTies) {
  Rng rng(1);
  EXPECT_EQ(rank_of({0.1, 0.9, 0.5}, 1, rng), 0);
  EXPECT_EQ(rank_of({0.1, 0.9, 0.5}, 2, rng), 1);
  EXPECT_EQ(rank_of({0.1, 0.9, 0.5}, 0, rng), 2);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 4000; ++i) ++counts[static_cast<std::size_t>(rank_of({0.3, 0.3, 0.3, 0.3}, 2, rng))];
  for (int c : counts) EXPECT_NEAR(c / 4000.0, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / 4000));
}

// Writer w's rows point along axis w, slightly perturbed.
Tensor clustered(int writers, int per_writer, Rng& rng, std::vector<int>& labels, double noise = 0.05) {
  Tensor e({writers * per_writer, writers});
  labels.clear();
  for (int w = 0; w < writers; ++w) {
    for (int i = 0; i < per_writer; ++i) {
      const int row = w * per_writer + i;
      for (int j = 0; j < writers; ++j) e.at({row, j}) = (j == w ? 1.0 : 0.0) + rng.uniform(-noise, noise);
      labels.push_back(w);
    }
  }
  return e;
}

TEST(RankEvaluation, SeparatedWritersAreAllFirst) {
  Rng rng(2);
  std::vector<int> labels;
  const Tensor e = clustered(2, 3, rng, labels);
  const RankReport r = rank_evaluation(e, labels, 10, 1);
  EXPECT_EQ(r.rank1, 1.0);
  EXPECT_EQ(r.rank5, 1.0);
  EXPECT_EQ(r.draws, 10);
  EXPECT_EQ(r.probes_per_draw, 4);
  EXPECT_EQ(r.draw_rank1.size(), 10u);
}

TEST(RankEvaluation, IdenticalEmbeddingsGiveChance) {
  const int writers = 10;
  Tensor e({writers * 30, 4}, 1.0);
  std::vector<int> labels;
  for (int w = 0; w < writers; ++w)
    for (int i = 0; i < 30; ++i) labels.push_back(w);
  const RankReport r = rank_evaluation(e, labels, 10, 3);
  const double n = 10.0 * r.probes_per_draw;
  EXPECT_NEAR(r.rank1, 0.1, 3.0 * std::sqrt(0.1 * 0.9 / n));
  EXPECT_NEAR(r.rank5, 0.5, 3.0 * std::sqrt(0.25 / n));
}

// Exhaustive oracle for 3 writers x 3 samples: every one of the 27 galleries,
// scored by counting templates that beat the true one.
TEST(RankEvaluation, MatchesExhaustiveOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<int> labels;
    const Tensor e = clustered(3, 3, rng, labels, 0.8);
    auto cosine = [&](int a, int b) {
      double d = 0, na = 0, nb = 0;
      for (int j = 0; j < 3; ++j) {
        d += e.at({a, j}) * e.at({b, j});
        na += e.at({a, j}) * e.at({a, j});
        nb += e.at({b, j}) * e.at({b, j});
      }
      return d / std::sqrt(na * nb);
    };
    std::set<double> possible;
    for (int g0 = 0; g0 < 3; ++g0)
      for (int g1 = 3; g1 < 6; ++g1)
        for (int g2 = 6; g2 < 9; ++g2) {
          const std::vector<int> gallery = {g0, g1, g2};
          long hits = 0, probes = 0;
          for (int i = 0; i < 9; ++i) {
            if (i == g0 || i == g1 || i == g2) continue;
            const double own = cosine(i, gallery[static_cast<std::size_t>(labels[i])]);
            int better = 0;
            for (int k = 0; k < 3; ++k) better += k != labels[i] && cosine(i, gallery[static_cast<std::size_t>(k)]) > own;
            hits += better == 0;
            ++probes;
          }
          Rng tie(1);
          const GalleryResult got = rank_against_gallery(e, labels, gallery, tie);
          EXPECT_EQ(got.probes, probes);
          EXPECT_EQ(got.hits1, hits) << "seed " << seed << " gallery " << g0 << g1 << g2;
          EXPECT_EQ(got.hits5, probes);
          possible.insert(static_cast<double>(hits) / static_cast<double>(probes));
        }
    const RankReport r = rank_evaluation(e, labels, 10, seed);
    for (double v : r.draw_rank1) EXPECT_TRUE(possible.count(v)) << v;
  }
}

TEST(RankEvaluation, InvariantToPositiveRescaling) {
  Rng rng(4);
  std::vector<int> labels;
  const Tensor e = clustered(6, 5, rng, labels, 0.9);
  Tensor scaled = e;
  for (int i = 0; i < scaled.dim(0); ++i) {
    const double c = std::ldexp(1.0, static_cast<int>(rng.below(20)) - 10);
    for (int j = 0; j < scaled.dim(1); ++j) scaled.at({i, j}) *= c;
  }
  const RankReport a = rank_evaluation(e, labels, 10, 5), b = rank_evaluation(scaled, labels, 10, 5);
  EXPECT_EQ(a.draw_rank1, b.draw_rank1);
  EXPECT_EQ(a.draw_rank5, b.draw_rank5);
}

TEST(RankEvaluation, PropertiesOnRandomData) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    std::vector<int> labels;
    const Tensor e = clustered(8, 4, rng, labels, 1.5);
    const RankReport r = rank_evaluation(e, labels, 10, seed);
    EXPECT_LE(r.rank1, r.rank5);
    for (std::size_t d = 0; d < r.draw_rank1.size(); ++d) EXPECT_LE(r.draw_rank1[d], r.draw_rank5[d]);
    EXPECT_GE(r.rank1, 0.0);
    EXPECT_LE(r.rank5, 1.0);
    const RankReport again = rank_evaluation(e, labels, 10, seed);
    EXPECT_EQ(to_json(r), to_json(again));
  }
}

TEST(RankEvaluation, WriterWithOneSampleIsAProtocolError) {
  Tensor e({3, 2}, 1.0);
  EXPECT_THROW(rank_evaluation(e, {0, 0, 1}, 10, 1), ProtocolError);
  EXPECT_THROW(rank_evaluation(e, {0, 0}, 10, 1), DimensionError);
}

TEST(RankReport, JsonAndText) {
  Rng rng(6);
  std::vector<int> labels;
  const RankReport r = rank_evaluation(clustered(3, 3, rng, labels), labels, 2, 7);
  const auto j = to_json(r);
  EXPECT_TRUE(j.contains("rank1"));
  EXPECT_TRUE(j.contains("rank5"));
  EXPECT_EQ(j["draw_rank1"].size(), 2u);
  EXPECT_NE(to_text(r).find("mean"), std::string::npos);
}

TEST(LetterSubsets, CountsBySize) {
  const auto all = letter_subsets("abcdeg", 2);
  EXPECT_EQ(all.size(), 57u);
  EXPECT_EQ(all.front(), "abcdeg");
  int pairs = 0;
  for (const auto& s : all) pairs += s.size() == 2;
  EXPECT_EQ(pairs, 15);
  EXPECT_EQ(letter_subsets("abc", 1), (std::vector<std::string>{"abc", "ab", "ac", "bc", "a", "b", "c"}));
}

TEST(Median, SmallSeries) {
  EXPECT_EQ(median({4.5}), 4.5);
  EXPECT_EQ(median({2.0, 2.0, 2.0}), 2.0);
  EXPECT_EQ(median({3.0, 1.0, 2.0, 10.0}), 2.5);
  EXPECT_THROW(median({}), UsageError);
}

ModelConfig tiny(int writers, const std::string& alphabet = "abc") {
  ModelConfig c;
  c.alphabet = alphabet;
  c.segment_channels = 4;
  c.stroke_hidden = 4;
  c.temporal_hidden = 4;
  c.image_widths = {2, 2, 3, 3, 4};
  c.num_writers = writers;
  return c;
}

struct Corpus {
  Corpus(int writers, int instances, SplitMode mode) {
    CorpusSpec spec;
    spec.writers = writers;
    spec.instances = instances;
    spec.alphabet = "abc";
    spec.seed = 91;
    records = generate_corpus(spec);
    manifest = build_manifest(records, spec.alphabet, spec.seed);
    if (mode == SplitMode::Closed) split_closed(manifest, records, 1, 1, 3);
    if (mode == SplitMode::Open) split_open(manifest, records, writers / 2, 3);
    corpus = prepare_corpus(records, spec.alphabet);
  }
  std::vector<RawTrajectory> records;
  DatasetManifest manifest;
  PreparedCorpus corpus;
};

// Classifier rows and running statistics from one negligible step.
void prepare(WriterNet& net, const Corpus& c) {
  TrainConfig t;
  t.epochs = 1;
  t.steps_per_epoch = 1;
  t.batch_size = 8;
  t.lr = 1e-12;
  train(net, c.corpus, c.manifest.assignment, t);
}

TEST(EvalClosed, SingleWriterIsAlwaysRight) {
  const Corpus c(1, 6, SplitMode::Closed);
  WriterNet net(tiny(1));
  prepare(net, c);
  const ClosedReport r = eval_closed(net, c.corpus, c.manifest.assignment);
  EXPECT_EQ(r.samples, 3);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(EvalClosed, UntrainedModelIsNearChance) {
  const Corpus c(10, 8, SplitMode::Closed);
  WriterNet net(tiny(10));
  prepare(net, c);
  const ClosedReport r = eval_closed(net, c.corpus, c.manifest.assignment);
  EXPECT_EQ(r.samples, 40);
  EXPECT_NEAR(r.accuracy, 0.1, 3.0 * std::sqrt(0.1 * 0.9 / 40));
}

TEST(EvalClosed, MissingClassifierRowIsAProtocolError) {
  const Corpus c(3, 4, SplitMode::Closed);
  WriterNet net(tiny(3));
  prepare(net, c);
  net.metadata["writers"] = {"x", "y", "z"};
  EXPECT_THROW(eval_closed(net, c.corpus, c.manifest.assignment), ProtocolError);
}

// Writer ids shuffled among the test records of each letter: embeddings then
// carry no information about the label and ranking must be at chance.
TEST(EvalOpen, UninformativeLabelsGiveChanceAndDeterministicReports) {
  Corpus c(20, 12, SplitMode::Open);
  WriterNet net(tiny(10));
  TrainConfig t;
  t.epochs = 1;
  t.steps_per_epoch = 1;
  t.batch_size = 8;
  t.lr = 1e-12;
  train(net, c.corpus, c.manifest.assignment, t);
  Rng rng(8);
  for (int l = 0; l < 3; ++l) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < c.corpus.records.size(); ++i) {
      if (c.manifest.assignment[i] == Partition::Test && c.corpus.records[i].letter == l) rows.push_back(i);
    }
    std::vector<int> ids;
    for (std::size_t i : rows) ids.push_back(c.corpus.records[i].writer);
    rng.shuffle(ids);
    for (std::size_t k = 0; k < rows.size(); ++k) c.corpus.records[rows[k]].writer = ids[k];
  }
  const RankReport r = eval_open(net, c.corpus, c.manifest.assignment, 10, 4);
  EXPECT_EQ(r.writers, 10);
  EXPECT_EQ(r.probes_per_draw, 110);
  EXPECT_LE(r.rank1, r.rank5);
  // Draws share probes, so the band uses the per-draw count.
  EXPECT_NEAR(r.rank1, 0.1, 3.0 * std::sqrt(0.1 * 0.9 / 110));
  EXPECT_EQ(to_json(r), to_json(eval_open(net, c.corpus, c.manifest.assignment, 10, 4)));
}

TEST(FewerLetters, FullAlphabetEqualsPlainEvaluation) {
  const Corpus c(6, 8, SplitMode::Open);
  WriterNet net(tiny(3));
  TrainConfig t;
  t.epochs = 1;
  t.steps_per_epoch = 2;
  t.batch_size = 4;
  train(net, c.corpus, c.manifest.assignment, t);
  const RankReport plain = eval_open(net, c.corpus, c.manifest.assignment, 10, 2);
  const FewerLettersReport r =
      eval_fewer_letters(net, c.corpus, c.manifest.assignment, SplitMode::Open, letter_subsets("abc", 2), 10, 2);
  ASSERT_EQ(r.subsets.size(), 4u);
  EXPECT_EQ(r.subsets[0].letters, "abc");
  EXPECT_EQ(r.subsets[0].rank1, plain.rank1);
  EXPECT_EQ(r.subsets[0].rank5, plain.rank5);
  ASSERT_EQ(r.mean_rank1.size(), 2u);
  EXPECT_EQ(r.mean_rank1[0].first, 3);
  EXPECT_EQ(r.mean_rank1[1].first, 2);
  EXPECT_DOUBLE_EQ(r.mean_rank1[1].second, (r.subsets[1].rank1 + r.subsets[2].rank1 + r.subsets[3].rank1) / 3);
  EXPECT_NE(to_text(r).find("rank1"), std::string::npos);
  EXPECT_EQ(to_json(r)["subsets"].size(), 4u);
  EXPECT_THROW(eval_fewer_letters(net, c.corpus, c.manifest.assignment, SplitMode::Open, {"az"}),
               UnsupportedLetterError);
}

TEST(FewerLetters, MaskedEmbeddingMatchesSubsetForward) {
  const Corpus c(3, 4, SplitMode::None);
  WriterNet net(tiny(0));
  {
    Tape tape;
    const ModelInput warm = make_input(c.corpus, "abc", {{0, 4, 8}, {12, 16, 20}, {24, 28, 32}});
    net.forward(tape, warm, NormContext{true, false});
  }
  const CellIndex cells = index_cells(c.corpus, {}, Partition::Test);
  const auto samples = test_samples(cells, {0, 1, 2}, {0, 1, 2}, 1);
  const auto masked = embed_samples(net, c.corpus, "abc", samples, {{1.0, 0.0, 1.0}, {0.0, 1.0, 0.0}});
  std::vector<Sample> ac = samples, b = samples;
  for (auto& s : ac) s.records = {s.records[0], s.records[2]};
  for (auto& s : b) s.records = {s.records[1]};
  const Tensor e_ac = embed_samples(net, c.corpus, "ac", ac)[0];
  const Tensor e_b = embed_samples(net, c.corpus, "b", b)[0];
  EXPECT_LE(testing::max_abs_diff(masked[0].data(), e_ac.data()), 1e-12);
  EXPECT_LE(testing::max_abs_diff(masked[1].data(), e_b.data()), 1e-12);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(ExportEmbeddings, HeaderRowsAndDeterminism) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto empty = dir / "scribeid_test_eval_empty.csv";
  write_embeddings_csv(empty, {}, "abc", 3, Tensor());
  EXPECT_EQ(read_file(empty), "writer_id,letters,e0,e1,e2\n");

  const Corpus c(4, 4, SplitMode::Closed);
  WriterNet net(tiny(4));
  prepare(net, c);
  const auto a = dir / "scribeid_test_eval_a.csv", b = dir / "scribeid_test_eval_b.csv";
  const long rows = export_embeddings(net, c.corpus, c.manifest.assignment, a, 5);
  export_embeddings(net, c.corpus, c.manifest.assignment, b, 5);
  const std::string text = read_file(a);
  EXPECT_EQ(text, read_file(b));
  EXPECT_EQ(rows, 8);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), rows + 1);
  EXPECT_EQ(text.substr(0, text.find('\n')), "writer_id,letters,e0,e1,e2,e3,e4,e5,e6,e7");
  EXPECT_THROW(write_embeddings_csv(dir / "no-such-dir" / "x.csv", {}, "abc", 3, Tensor()), IoError);
  for (const auto& p : {empty, a, b}) std::filesystem::remove(p);
}

TEST(Latency, MeasuresEveryRepetition) {
  WriterNet net(tiny(0));
  const Corpus c(2, 2, SplitMode::None);
  {
    Tape tape;
    net.forward(tape, make_input(c.corpus, "abc", {{0, 2, 4}, {6, 8, 10}}), NormContext{true, false});
  }
  const ModelInput in = make_input(c.corpus, "abc", {{0, 2, 4}});
  const LatencyReport one = measure_latency(net, in, 1);
  ASSERT_EQ(one.samples_ms.size(), 1u);
  EXPECT_EQ(one.median_ms, one.samples_ms[0]);
  const LatencyReport five = measure_latency(net, in, 5);
  EXPECT_EQ(five.samples_ms.size(), 5u);
  EXPECT_GT(five.median_ms, 0.0);
  EXPECT_THROW(measure_latency(net, in, 0), UsageError);
}

}  // namespace
}  // namespace scribeid
