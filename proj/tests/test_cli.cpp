#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "mdrnn/checkpoint.hpp"
#include "mdrnn/cli.hpp"
#include "mdrnn/decoder.hpp"

using namespace mdrnn;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

/// Synthetic data and a tiny architecture shared by the cases below.
struct Fixture {
  fs::path root = fs::temp_directory_path() / "mdrnn_cli_test";
  fs::path config = root / "toy.json";

  Fixture() {
    fs::remove_all(root);
    fs::create_directories(root);
    write_text(config, R"({
      "architecture": {"block": [2, 1], "init_std": 0.3, "dropout_p": 0.5, "peepholes": false,
                       "stages": [{"lstm_units": 2, "filter": [2, 1], "features": 3, "dropout": false}],
                       "top": {"lstm_units": 4, "dropout": true}},
      "synth": {"chars": "01 ", "height": 9, "min_length": 1, "max_length": 2, "max_shift": 0,
                "min_gap": 2, "max_gap": 3, "noise": 0.05},
      "training": {"learning_rate": 0.01}
    })");
    const auto r = cli({"synth", "--config", config.string(), "--train-count", "6", "--valid-count", "3",
                        "--out", (root / "data").string()});
    REQUIRE(r.code == kExitOk);
  }
  ~Fixture() { fs::remove_all(root); }

  std::vector<std::string> train_args(const fs::path& out) const {
    return {"train", "--config", config.string(), "--train", (root / "data/train").string(),
            "--valid", (root / "data/valid").string(), "--epochs", "5", "--seed", "7",
            "--out", out.string()};
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("train writes its artifacts and reruns are byte-identical") {
  auto& f = fixture();
  const auto a = cli(f.train_args(f.root / "a"));
  REQUIRE_MESSAGE(a.code == kExitOk, a.err);
  for (const char* name : {"best.ckpt", "final.ckpt", "convergence.tsv", "config.json", "priors.json"})
    CHECK(fs::exists(f.root / "a" / name));
  std::istringstream log(slurp(f.root / "a/convergence.tsv"));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(log, line)) rows += !line.empty();
  CHECK(rows == 6);  // header + 5 epochs

  const auto b = cli(f.train_args(f.root / "b"));
  REQUIRE(b.code == kExitOk);
  for (const char* name : {"best.ckpt", "final.ckpt", "convergence.tsv", "priors.json"})
    CHECK(slurp(f.root / "a" / name) == slurp(f.root / "b" / name));

  // The resolved config alone reproduces the run.
  const auto c = cli({"train", "--config", (f.root / "a/config.json").string(), "--out", (f.root / "c").string()});
  REQUIRE_MESSAGE(c.code == kExitOk, c.err);
  CHECK(slurp(f.root / "a/final.ckpt") == slurp(f.root / "c/final.ckpt"));
  CHECK(slurp(f.root / "a/convergence.tsv") == slurp(f.root / "c/convergence.tsv"));
}

TEST_CASE("configuration and data errors map to exit codes") {
  auto& f = fixture();
  auto args = f.train_args(f.root / "bad");
  args.insert(args.end(), {"--lr", "-1"});
  CHECK(cli(args).code == kExitConfig);
  CHECK(cli({"train", "--bogus"}).code == kExitConfig);
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"train", "--train", (f.root / "nothere").string(), "--valid", (f.root / "nothere").string(),
             "--alphabet", "01 ", "--out", (f.root / "bad2").string()})
            .code == kExitData);
  write_text(f.root / "empty.json", R"({"experiment": {"configs": []}})");
  CHECK(cli({"experiment", "--config", (f.root / "empty.json").string(), "--train",
             (f.root / "data/train").string(), "--valid", (f.root / "data/valid").string(), "--out",
             (f.root / "bad3").string()})
            .code == kExitConfig);
  CHECK(cli({"norms", "--checkpoint", (f.root / "missing.ckpt").string()}).code == kExitData);
}

TEST_CASE("zero learning rate warns") {
  auto& f = fixture();
  auto args = f.train_args(f.root / "lr0");
  args.insert(args.end(), {"--lr", "0"});
  const auto r = cli(args);
  CHECK(r.code == kExitOk);
  CHECK(r.err.find("learning_rate is 0") != std::string::npos);
}

TEST_CASE("eval on perfect posteriors reports zero error") {
  auto& f = fixture();
  // Alphabet " ab": blank 0, space 1, a 2, b 3.
  auto onehot = [](std::vector<int> path) {
    nlohmann::json rows = nlohmann::json::array();
    for (int k : path) {
      std::vector<double> r(4, 0.0);
      r[k] = 1.0;
      rows.push_back(r);
    }
    return rows;
  };
  std::string jsonl = R"({"alphabet": [" ", "a", "b"]})" "\n";
  jsonl += nlohmann::json{{"id", "l1"}, {"posteriors", onehot({2, 0, 2, 3, 1, 3})}, {"transcript", "aab b"}}.dump() + "\n";
  jsonl += nlohmann::json{{"id", "l2"}, {"posteriors", onehot({0, 3, 3, 2, 0})}, {"transcript", "ba"}}.dump() + "\n";
  write_text(f.root / "post.jsonl", jsonl);

  const auto r = cli({"eval", "--posteriors", (f.root / "post.jsonl").string(), "--out", (f.root / "ev").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  const std::string tsv = slurp(f.root / "ev/report.tsv");
  CHECK(tsv.find("best-path\t2\t0\t0\t") != std::string::npos);
  CHECK(fs::exists(f.root / "ev/hypotheses.tsv"));
  CHECK(fs::exists(f.root / "ev/report.txt"));

  // Closed-vocabulary decode: every output word comes from the lexicon.
  write_text(f.root / "lex.txt", "aab\ta a b\nb\tb\nba\tba\nab\tab\n");
  const auto d = cli({"decode", "--posteriors", (f.root / "post.jsonl").string(), "--lexicon",
                      (f.root / "lex.txt").string(), "--beam", "4", "--out", (f.root / "dec").string()});
  REQUIRE_MESSAGE(d.code == kExitOk, d.err);
  const auto lex = Lexicon::read(f.root / "lex.txt", LabelAlphabet::from_chars(" ab"));
  std::istringstream lines(slurp(f.root / "dec/decode.tsv"));
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    ++count;
    const auto hyp = line.substr(line.find('\t') + 1, line.rfind('\t') - line.find('\t') - 1);
    std::istringstream words(hyp);
    for (std::string w; words >> w;) CHECK(lex.contains(w));
  }
  CHECK(count == 2);
  CHECK(slurp(f.root / "dec/report.tsv").find("constrained\t2\t0\t0\t") != std::string::npos);

  write_text(f.root / "bad.jsonl", R"({"alphabet": ["a"]})" "\n" R"({"id": "x", "posteriors": [[0.5]]})" "\n");
  CHECK(cli({"eval", "--posteriors", (f.root / "bad.jsonl").string(), "--out", (f.root / "ev2").string()}).code ==
        kExitData);
}

TEST_CASE("norms of fresh and zero checkpoints") {
  auto& f = fixture();
  ArchitectureSpec spec = ArchitectureSpec::baseline();
  spec.stages.resize(1);
  const auto alphabet = LabelAlphabet::from_chars("01");
  save_checkpoint(f.root / "zero.ckpt", Network(spec, alphabet.size()), alphabet);
  Rng init(3);
  save_checkpoint(f.root / "fresh.ckpt", Network::build(spec, alphabet.size(), init), alphabet);

  const auto z = cli({"norms", "--checkpoint", (f.root / "zero.ckpt").string()});
  REQUIRE(z.code == kExitOk);
  CHECK(z.out.find("classification  L2    0.000000") != std::string::npos);
  const auto n = cli({"norms", "--checkpoint", (f.root / "fresh.ckpt").string(), "--out", (f.root / "n").string()});
  REQUIRE(n.code == kExitOk);
  CHECK(n.out.find("0.000000") == std::string::npos);
  CHECK(fs::exists(f.root / "n/norms.tsv"));
}

TEST_CASE("experiment matrix writes a table and per-run logs") {
  auto& f = fixture();
  const auto r = cli({"experiment", "--config", f.config.string(), "--train", (f.root / "data/train").string(),
                      "--valid", (f.root / "data/valid").string(), "--preset", "fig3", "--epochs", "1", "--out",
                      (f.root / "exp").string()});
  REQUIRE_MESSAGE(r.code == kExitOk, r.err);
  CHECK(fs::exists(f.root / "exp/experiment.tsv"));
  std::size_t runs = 0;
  for (const auto& e : fs::directory_iterator(f.root / "exp"))
    if (e.is_directory()) {
      ++runs;
      CHECK(fs::exists(e.path() / "convergence.tsv"));
    }
  CHECK(runs == 2);
}
