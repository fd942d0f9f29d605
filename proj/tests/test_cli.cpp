#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct Outcome {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("scribeid_test_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  Outcome run(const std::string& args) {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = "cd '" + dir_.string() + "' && '" SCRIBEID_CLI "' " + args + " 2>'" + err.string() + "'";
    Outcome r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    std::size_t n = 0;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
    const int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = slurp(err);
    return r;
  }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name);
    out << content;
  }

  fs::path dir_;
};

void expect_error_line(const Outcome& r, const std::string& code) {
  EXPECT_NE(r.exit_code, 0);
  ASSERT_FALSE(r.err.empty());
  const std::string last = r.err.substr(r.err.rfind('\n', r.err.size() - 2) == std::string::npos
                                            ? 0
                                            : r.err.rfind('\n', r.err.size() - 2) + 1);
  const json j = json::parse(last);
  EXPECT_EQ(j["error"]["code"], code) << r.err;
  EXPECT_TRUE(j["error"]["message"].is_string());
}

TEST_F(Cli, GenDataIsByteIdenticalForTheSameSeed) {
  ASSERT_EQ(run("gen-data --writers 3 --instances 4 --alphabet ab --seed 9 --out one").exit_code, 0);
  ASSERT_EQ(run("gen-data --writers 3 --instances 4 --alphabet ab --seed 9 --out two").exit_code, 0);
  ASSERT_EQ(run("gen-data --writers 3 --instances 4 --alphabet ab --seed 10 --out three").exit_code, 0);
  const std::string a = slurp(dir_ / "one" / "corpus.jsonl");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir_ / "two" / "corpus.jsonl"));
  EXPECT_EQ(slurp(dir_ / "one" / "manifest.json"), slurp(dir_ / "two" / "manifest.json"));
  EXPECT_NE(a, slurp(dir_ / "three" / "corpus.jsonl"));
}

TEST_F(Cli, GradcheckPassesAndPrintsTheError) {
  const Outcome r = run("gradcheck");
  EXPECT_EQ(r.exit_code, 0) << r.err;
  std::smatch m;
  ASSERT_TRUE(std::regex_search(r.out, m, std::regex(R"(max_rel_error ([0-9.e+-]+))"))) << r.out;
  EXPECT_LE(std::stod(m[1].str()), 1e-4);
}

TEST_F(Cli, ErrorsAreOneJsonLineOnStderr) {
  expect_error_line(run("split --manifest nowhere.json --mode open --train-writers 2"), "io_error");
  expect_error_line(run("split --manifest x --mode sideways"), "usage_error");
  expect_error_line(run("frobnicate"), "usage_error");
  ASSERT_EQ(run("gen-data --writers 3 --instances 4 --alphabet ab --out d").exit_code, 0);
  expect_error_line(run("split --manifest d/manifest.json --mode open --train-writers 3"), "protocol_error");
  expect_error_line(run("split --manifest d/manifest.json --mode closed --ratio 3-1"), "configuration_error");
  write("bad.json", "{\"manifest\": \"d/manifest.json\"}");
  expect_error_line(run("train --config bad.json"), "configuration_error");
  write("broken.json", "{");
  expect_error_line(run("train --config broken.json"), "parse_error");
}

TEST_F(Cli, PipelineFromCorpusToReports) {
  ASSERT_EQ(run("gen-data --writers 6 --instances 6 --alphabet abc --seed 5 --out data").exit_code, 0);
  const Outcome sel = run("select --manifest data/manifest.json --m 6 --n 5");
  ASSERT_EQ(sel.exit_code, 0) << sel.err;
  EXPECT_EQ(json::parse(sel.out)["letters"], "abc");
  EXPECT_EQ(json::parse(sel.out)["num_writers"], 6);

  const Outcome split = run("split --manifest data/manifest.json --mode open --train-writers 4 --seed 2 --out open.json");
  ASSERT_EQ(split.exit_code, 0) << split.err;
  EXPECT_EQ(json::parse(split.out)["test_records"], 36);

  write("train.json", R"({"manifest": "open.json", "output": "run",
    "model": {"alphabet": "abc", "T": 16, "raster": 16, "segment_channels": 4, "stroke_hidden": 4,
              "temporal_hidden": 4, "image_widths": [2, 2, 3, 3, 4]},
    "train": {"epochs": 2, "batch_size": 6, "letter_independent": true}})");
  const Outcome train = run("train --config train.json");
  ASSERT_EQ(train.exit_code, 0) << train.err;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "model.ckpt"));
  std::ifstream metrics(dir_ / "run" / "metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(metrics, line); ++lines) EXPECT_TRUE(json::parse(line).contains("loss"));
  EXPECT_EQ(lines, 2);

  const Outcome open = run("eval --mode open --checkpoint run/model.ckpt --manifest open.json --draws 3");
  ASSERT_EQ(open.exit_code, 0) << open.err;
  const json report = json::parse(open.out);
  EXPECT_TRUE(report["rank1"].is_number());
  EXPECT_TRUE(report["rank5"].is_number());
  EXPECT_EQ(report["draw_rank1"].size(), 3u);

  const Outcome fewer = run("eval --mode fewer-letters --checkpoint run/model.ckpt --manifest open.json --draws 2");
  ASSERT_EQ(fewer.exit_code, 0) << fewer.err;
  EXPECT_EQ(json::parse(fewer.out)["subsets"].size(), 4u);

  const Outcome bad_letters =
      run("eval --mode fewer-letters --checkpoint run/model.ckpt --manifest open.json --subsets az");
  expect_error_line(bad_letters, "unsupported_letter");

  const Outcome closed = run("eval --mode closed --checkpoint run/model.ckpt --manifest open.json");
  expect_error_line(closed, "protocol_error");

  const Outcome exp = run("export-embeddings --checkpoint run/model.ckpt --manifest open.json --out emb.csv");
  ASSERT_EQ(exp.exit_code, 0) << exp.err;
  const std::string csv = slurp(dir_ / "emb.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "writer_id,letters,e0,e1,e2,e3,e4,e5,e6,e7");

  const Outcome lat = run("bench-latency --checkpoint run/model.ckpt --reps 3");
  ASSERT_EQ(lat.exit_code, 0) << lat.err;
  EXPECT_GT(json::parse(lat.out)["median_ms"].get<double>(), 0.0);
}

}  // namespace
