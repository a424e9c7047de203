#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "../support/oracles.hpp"
#include "dermnet/cli.hpp"
#include "dermnet/dataset.hpp"
#include "dermnet/weights_io.hpp"

using namespace dermnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = cli_dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

/// Metadata CSV plus one small PNG per image id.
fs::path fixture(const fs::path& dir, std::size_t lesions) {
  const std::string csv = oracle::synthetic_metadata_csv(lesions, 8);
  std::ofstream(dir / "meta.csv") << csv;
  fs::create_directories(dir / "raw");
  std::istringstream in(csv);
  std::size_t i = 0;
  for (const auto& r : parse_metadata(in)) write_png(oracle::noise_image(24, 18, i++), dir / "raw" / (r.image_id + ".png"));
  return dir / "meta.csv";
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"summary", "--help"}).code == 0);
  const Run bad = run({"train", "--bogus"});
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "usage error"));
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({}).code == 2);
  const Run missing = run({"eda", "--metadata", "/nonexistent/meta.csv", "--out", "/tmp"});
  CHECK(missing.code == 1);
  CHECK(contains(missing.err, "error: "));
}

TEST_CASE("summary of a fresh build") {
  const Run r = run({"summary"});
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "Total params: 3236039"));
  CHECK(contains(r.out, "Trainable params: 7175"));
}

TEST_CASE("evaluate from a predictions file") {
  const auto dir = oracle::scratch_dir("cli_eval");
  {
    std::ofstream p(dir / "pred.csv");
    p << "image_id,true_dx,akiec,bcc,bkl,df,mel,nv,vasc\n";
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      for (int k = 0; k < 3; ++k) {
        p << "ISIC_" << c << k << ',' << kClassLabels[c].code;
        for (std::size_t j = 0; j < kNumClasses; ++j) p << ',' << (j == c ? 0.9 : 0.1 / 6);
        p << '\n';
      }
    }
  }
  const Run r = run({"evaluate", "--predictions", (dir / "pred.csv").string(), "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(contains(r.out, "Categorical accuracy: 1.00"));
  CHECK(contains(r.out, "Top-3 accuracy: 1.00"));
  CHECK(json::parse(slurp(dir / "out" / "report.json"))["top1_accuracy"] == 1.0);
  CHECK(fs::exists(dir / "out" / "confusion.csv"));
  CHECK(fs::exists(dir / "out" / "report.txt"));

  std::ofstream(dir / "broken.csv") << "true_dx,akiec\nnv,1\n";
  CHECK(run({"evaluate", "--predictions", (dir / "broken.csv").string(), "--out", (dir / "o2").string()}).code == 1);
  fs::remove_all(dir);
}

TEST_CASE("pipeline: prepare, eda, augment, train, evaluate, predict") {
  const auto dir = oracle::scratch_dir("cli_pipeline");
  const fs::path meta = fixture(dir, 60);
  const std::string d = dir.string();

  const Run prep = run({"prepare", "--metadata", meta.string(), "--images", d + "/raw", "--out", d + "/prep",
                        "--validation", "12", "--size", "32"});
  REQUIRE_MESSAGE(prep.code == 0, prep.err);
  CHECK(contains(prep.out, "split: "));
  const DatasetIndex index = read_split_csv(dir / "prep" / "split.csv");
  CHECK(index.count(Split::validation) >= 12);
  const Image resized = read_image(dir / "prep" / "images" / (index.records.front().image_id + ".png"));
  CHECK(resized.width == 32);
  CHECK(resized.height == 32);

  // Rerunning gives byte-identical split files.
  REQUIRE(run({"prepare", "--metadata", meta.string(), "--out", d + "/prep2", "--validation", "12"}).code == 0);
  CHECK(slurp(dir / "prep" / "split.csv") == slurp(dir / "prep2" / "split.csv"));

  const Run eda = run({"eda", "--metadata", meta.string(), "--out", d + "/eda"});
  REQUIRE(eda.code == 0);
  for (const char* f : {"eda_age_by_class.csv", "eda_age_overall.csv", "eda_localization.csv", "eda_class_counts.csv",
                        "eda_report.json"}) {
    CHECK(fs::exists(dir / "eda" / f));
  }

  const Run aug = run({"augment", "--split", d + "/prep/split.csv", "--images", d + "/prep/images", "--out", d + "/aug",
                       "--target", "12", "--seed", "4"});
  REQUIRE_MESSAGE(aug.code == 0, aug.err);
  REQUIRE(run({"augment", "--split", d + "/prep/split.csv", "--out", d + "/aug2", "--target", "12", "--seed", "4",
               "--manifest-only"})
              .code == 0);
  CHECK(slurp(dir / "aug" / "manifest.csv") == slurp(dir / "aug2" / "manifest.csv"));
  CHECK_FALSE(fs::exists(dir / "aug2" / "images"));

  const std::vector<std::string> train_args{"train",       "--split", d + "/prep/split.csv", "--images", d + "/prep/images",
                                            "--augmented", d + "/aug", "--out", d + "/model", "--input-size", "32",
                                            "--width",     "0.25", "--epochs", "2"};
  const Run tr = run(train_args);
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  CHECK(contains(tr.out, "epoch 2:"));
  const std::string history = slurp(dir / "model" / "history.csv");
  const std::string weights = slurp(dir / "model" / "model.dwsn");
  auto again = train_args;
  again[8] = d + "/model2";
  REQUIRE(run(again).code == 0);
  CHECK(history == slurp(dir / "model2" / "history.csv"));
  CHECK(weights == slurp(dir / "model2" / "model.dwsn"));

  const Run ev = run({"evaluate", "--model", d + "/model/model.dwsn", "--split", d + "/prep/split.csv", "--images",
                      d + "/prep/images", "--out", d + "/eval"});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  CHECK(contains(ev.out, "Top-2 accuracy: "));

  const std::string image = (dir / "raw" / (index.records.front().image_id + ".png")).string();
  const Run pr = run({"predict", "--model", d + "/model/model.dwsn", "--image", image});
  REQUIRE_MESSAGE(pr.code == 0, pr.err);
  const json body = json::parse(pr.out);
  CHECK(body["predictions"].size() == 7);
  CHECK(body["top3"].size() == 3);
  CHECK(run({"predict", "--model", d + "/model/model.dwsn", "--image", image}).out == pr.out);
  CHECK(run({"predict", "--model", d + "/model/model.dwsn", "--image", meta.string()}).code == 1);

  const Run sum = run({"summary", "--model", d + "/model/model.dwsn"});
  CHECK(sum.code == 0);
  fs::remove_all(dir);
}
