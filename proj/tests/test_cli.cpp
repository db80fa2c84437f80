#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

// End-to-end checks for the command line tool. Every test shells out to the
// built binary (its path arrives via XMODAL_CLI_PATH) and inspects exit codes,
// captured streams, and the files each subcommand writes into a scratch dir.

using json = nlohmann::json;

namespace {

struct TempDir {
  std::string path;
  TempDir() {
    path = "/tmp/xmodal_cli_test_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter()++);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return path + "/" + name; }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream s(text);
  std::string line;
  while (std::getline(s, line)) out.push_back(line);
  return out;
}

bool exists(const std::string& path) {
  return std::filesystem::exists(path);
}

std::string fixture(const std::string& name) {
  return std::string(XMODAL_FIXTURE_DIR) + "/" + name;
}

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Runs the binary with the given argument string, capturing both streams.
RunResult run_cli(const std::string& args) {
  static TempDir captures;
  static int call = 0;
  const std::string base = captures.file("cap" + std::to_string(call++));
  const std::string cmd = std::string(XMODAL_CLI_PATH) + " " + args + " > " +
                          base + ".out 2> " + base + ".err";
  int status = std::system(cmd.c_str());
  RunResult r;
  if (WIFEXITED(status)) r.code = WEXITSTATUS(status);
  r.out = slurp(base + ".out");
  r.err = slurp(base + ".err");
  return r;
}

// Shared pipeline artifacts: a small generated corpus plus a checkpoint
// trained on it with pinned flags. Built once on first use; the same command
// sequence produced tests/fixtures/diagnose_reference.csv.
struct Workspace {
  TempDir dir;
  std::string synth_dir;
  std::string train_dir;
  std::string corpus;
  std::string checkpoint;
  std::string synth_stdout;
  std::string train_stdout;
};

const Workspace& workspace() {
  static Workspace ws = [] {
    Workspace w;
    w.synth_dir = w.dir.file("synth");
    w.train_dir = w.dir.file("train");
    RunResult synth = run_cli("synth --config " + fixture("synth_golden.json") +
                              " --out " + w.synth_dir);
    INFO(synth.err);
    REQUIRE(synth.code == 0);
    w.corpus = w.synth_dir + "/corpus.jsonl";
    w.synth_stdout = synth.out;

    RunResult train = run_cli(
        "train --corpus " + w.corpus + " --out " + w.train_dir +
        " --regime rnd-vl --model-config " + fixture("model_golden.json") +
        " --seed 9 --epochs 3 --batch-size 8 --lr 0.002");
    INFO(train.err);
    REQUIRE(train.code == 0);
    w.checkpoint = w.train_dir + "/checkpoint.bin";
    w.train_stdout = train.out;
    return w;
  }();
  return ws;
}

json load_manifest(const std::string& dir) {
  return json::parse(slurp(dir + "/manifest.json"));
}

}  // namespace

TEST_CASE("version flag prints the release version") {
  RunResult r = run_cli("--version");
  CHECK(r.code == 0);
  CHECK(r.out.find("1.0.0") != std::string::npos);
}

TEST_CASE("help lists the subcommands") {
  RunResult r = run_cli("--help");
  CHECK(r.code == 0);
  for (const char* name : {"synth", "train", "diagnose", "sweep", "stats"}) {
    CHECK(r.out.find(name) != std::string::npos);
  }
}

TEST_CASE("missing or unknown subcommands are usage errors") {
  RunResult none = run_cli("");
  CHECK(none.code == 2);
  CHECK(!none.err.empty());

  RunResult unknown = run_cli("frobnicate");
  CHECK(unknown.code == 2);
}

TEST_CASE("synth writes the corpus files and a manifest") {
  const Workspace& ws = workspace();
  CHECK(exists(ws.synth_dir + "/corpus.jsonl"));
  CHECK(exists(ws.synth_dir + "/labels.jsonl"));
  CHECK(exists(ws.synth_dir + "/manifest.json"));

  CHECK(ws.synth_stdout.find("corpus.jsonl") != std::string::npos);
  CHECK(ws.synth_stdout.find("images: 12") != std::string::npos);
  CHECK(ws.synth_stdout.find("examples: 24") != std::string::npos);
  CHECK(ws.synth_stdout.find("corrupted labels: 0 /") != std::string::npos);

  json m = load_manifest(ws.synth_dir);
  CHECK(m.at("tool") == "xmodal");
  CHECK(m.at("version") == "1.0.0");
  CHECK(m.at("format_version") == 1);
  CHECK(m.at("command") == "synth");
  CHECK(m.at("config").at("seed") == 404);
  CHECK(m.at("config").at("scene").at("feature_dim") == 8);
  const auto& outputs = m.at("outputs");
  CHECK(std::find(outputs.begin(), outputs.end(), "corpus.jsonl") != outputs.end());
  CHECK(std::find(outputs.begin(), outputs.end(), "labels.jsonl") != outputs.end());
  CHECK(m.at("timestamp_utc").get<std::string>().find('T') != std::string::npos);
}

TEST_CASE("synth seed override controls the generated bytes") {
  TempDir tmp;
  const std::string cfg = fixture("synth_golden.json");
  REQUIRE(run_cli("synth --config " + cfg + " --out " + tmp.file("a") +
                  " --seed 7").code == 0);
  REQUIRE(run_cli("synth --config " + cfg + " --out " + tmp.file("b") +
                  " --seed 7").code == 0);
  REQUIRE(run_cli("synth --config " + cfg + " --out " + tmp.file("c") +
                  " --seed 8").code == 0);

  const std::string a = slurp(tmp.file("a") + "/corpus.jsonl");
  CHECK(a == slurp(tmp.file("b") + "/corpus.jsonl"));
  CHECK(a != slurp(tmp.file("c") + "/corpus.jsonl"));
}

TEST_CASE("synth rejects a config with unknown keys") {
  TempDir tmp;
  spit(tmp.file("bad.json"), "{\"num_images\": 4, \"bogus\": 1}\n");
  RunResult r = run_cli("synth --config " + tmp.file("bad.json") + " --out " +
                        tmp.file("out"));
  CHECK(r.code == 2);
  CHECK(r.err.find("bogus") != std::string::npos);
}

TEST_CASE("train writes a checkpoint, loss log, and manifest") {
  const Workspace& ws = workspace();
  CHECK(exists(ws.checkpoint));
  CHECK(exists(ws.train_dir + "/loss_log.csv"));

  std::vector<std::string> log = lines_of(slurp(ws.train_dir + "/loss_log.csv"));
  REQUIRE(log.size() > 1);
  CHECK(log[0] == "phase,epoch,step,mlm_bits,mrc_bits,itm_bits,total");
  CHECK(log[1].rfind("vl,0,1,", 0) == 0);

  CHECK(ws.train_stdout.find("trained rnd-vl") != std::string::npos);
  CHECK(ws.train_stdout.find("checkpoint.bin") != std::string::npos);

  json m = load_manifest(ws.train_dir);
  CHECK(m.at("command") == "train");
  CHECK(m.at("config").at("regime") == "rnd-vl");
  CHECK(m.at("config").at("train").at("seed") == 9);
  CHECK(m.at("config").at("model").at("hidden_dim") == 16);
  CHECK(m.at("inputs").at("corpus") == ws.corpus);
  const auto& outputs = m.at("outputs");
  CHECK(std::find(outputs.begin(), outputs.end(), "checkpoint.bin") != outputs.end());
  CHECK(std::find(outputs.begin(), outputs.end(), "loss_log.csv") != outputs.end());
}

TEST_CASE("textinit regimes demand an initializer checkpoint") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli("train --corpus " + ws.corpus + " --out " +
                        tmp.file("out") + " --regime textinit-vl --epochs 1");
  CHECK(r.code == 2);
  CHECK(r.err.find("--init-from") != std::string::npos);
}

TEST_CASE("a text-only run writes an initializer that textinit accepts") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult text = run_cli(
      "train --corpus " + ws.corpus + " --out " + tmp.file("text") +
      " --regime textonly-mlm --model-config " + fixture("model_golden.json") +
      " --seed 3 --epochs 1 --batch-size 8 --lr 0.002");
  INFO(text.err);
  REQUIRE(text.code == 0);
  const std::string init = tmp.file("text") + "/text_checkpoint.bin";
  REQUIRE(exists(init));

  json m = load_manifest(tmp.file("text"));
  const auto& outputs = m.at("outputs");
  CHECK(std::find(outputs.begin(), outputs.end(), "text_checkpoint.bin") !=
        outputs.end());

  RunResult joint = run_cli(
      "train --corpus " + ws.corpus + " --out " + tmp.file("joint") +
      " --regime textinit-vl --init-from " + init + " --model-config " +
      fixture("model_golden.json") +
      " --seed 3 --epochs 1 --batch-size 8 --lr 0.002");
  INFO(joint.err);
  CHECK(joint.code == 0);
  CHECK(exists(tmp.file("joint") + "/checkpoint.bin"));
}

TEST_CASE("a run that diverges exits with the divergence code") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli(
      "train --corpus " + ws.corpus + " --out " + tmp.file("out") +
      " --regime rnd-vl --model-config " + fixture("model_golden.json") +
      " --seed 9 --epochs 1 --batch-size 8 --lr 1e300");
  CHECK(r.code == 3);
  CHECK(r.err.find("divergence") != std::string::npos);
}

TEST_CASE("diagnose reproduces the pinned reference results") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli("diagnose --checkpoint " + ws.checkpoint +
                        " --corpus " + ws.corpus + " --out " + tmp.file("diag"));
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("results.csv") != std::string::npos);

  CHECK(exists(tmp.file("diag") + "/aggregate.csv"));
  CHECK(exists(tmp.file("diag") + "/aggregate.svg"));
  CHECK(exists(tmp.file("diag") + "/manifest.json"));

  const std::string results = slurp(tmp.file("diag") + "/results.csv");
  std::vector<std::string> rows = lines_of(results);
  REQUIRE(rows.size() > 1);
  CHECK(rows[0] ==
        "datapoint_id,diagnostic,setup,tau,measure,loss_bits,target_region,"
        "num_ablated");
  CHECK(results == slurp(fixture("diagnose_reference.csv")));

  json m = load_manifest(tmp.file("diag"));
  CHECK(m.at("command") == "diagnose");
  CHECK(m.at("config").at("tau") == 0.5);
  CHECK(m.at("config").at("target") == "silver");
}

TEST_CASE("diagnose without an intact baseline skips the aggregate outputs") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli("diagnose --checkpoint " + ws.checkpoint +
                        " --corpus " + ws.corpus + " --out " + tmp.file("diag") +
                        " --setups object,all");
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.err.find("no intact baseline") != std::string::npos);
  CHECK(exists(tmp.file("diag") + "/results.csv"));
  CHECK(!exists(tmp.file("diag") + "/aggregate.csv"));
  CHECK(!exists(tmp.file("diag") + "/aggregate.svg"));

  json m = load_manifest(tmp.file("diag"));
  CHECK(m.at("outputs") == json::array({"results.csv"}));
}

TEST_CASE("diagnose validates its enum and threshold arguments") {
  const Workspace& ws = workspace();
  TempDir tmp;
  const std::string base = "diagnose --checkpoint " + ws.checkpoint +
                           " --corpus " + ws.corpus + " --out " +
                           tmp.file("diag");

  CHECK(run_cli(base + " --diagnostics v4l,bogus").code == 2);
  CHECK(run_cli(base + " --target neither").code == 2);
  CHECK(run_cli(base + " --all-text everything").code == 2);
  CHECK(run_cli(base + " --tau 1.5").code == 2);
}

TEST_CASE("diagnose rejects a corpus the checkpoint was not trained for") {
  const Workspace& ws = workspace();
  TempDir tmp;
  json cfg = json::parse(slurp(fixture("synth_golden.json")));
  cfg["scene"]["feature_dim"] = 4;
  spit(tmp.file("narrow.json"), cfg.dump());
  REQUIRE(run_cli("synth --config " + tmp.file("narrow.json") + " --out " +
                  tmp.file("narrow")).code == 0);

  RunResult r = run_cli("diagnose --checkpoint " + ws.checkpoint +
                        " --corpus " + tmp.file("narrow") + "/corpus.jsonl" +
                        " --out " + tmp.file("diag"));
  CHECK(r.code == 4);
  CHECK(r.err.find("incompatible") != std::string::npos);
}

TEST_CASE("a tampered checkpoint fails its integrity check") {
  const Workspace& ws = workspace();
  TempDir tmp;
  std::string bytes = slurp(ws.checkpoint);
  REQUIRE(bytes.size() > 200);

  SECTION("flipped byte") {
    bytes[bytes.size() / 2] ^= 0x40;
    spit(tmp.file("bad.bin"), bytes);
  }
  SECTION("truncated file") {
    spit(tmp.file("bad.bin"), bytes.substr(0, bytes.size() - 100));
  }

  RunResult r = run_cli("diagnose --checkpoint " + tmp.file("bad.bin") +
                        " --corpus " + ws.corpus + " --out " + tmp.file("diag"));
  CHECK(r.code == 2);
  CHECK(!r.err.empty());
}

TEST_CASE("gold targets work on a generated corpus") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli("diagnose --checkpoint " + ws.checkpoint +
                        " --corpus " + ws.corpus + " --out " + tmp.file("diag") +
                        " --diagnostics l4v --target gold");
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(lines_of(slurp(tmp.file("diag") + "/results.csv")).size() > 1);
}

TEST_CASE("sweep writes the threshold curve and underlying records") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli("sweep --checkpoint " + ws.checkpoint + " --corpus " +
                        ws.corpus + " --out " + tmp.file("sweep") +
                        " --taus 0.2,0.5,0.8");
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("(intact)") != std::string::npos);
  CHECK(r.out.find("(all ablated)") != std::string::npos);

  CHECK(exists(tmp.file("sweep") + "/sweep.svg"));
  CHECK(exists(tmp.file("sweep") + "/results.csv"));

  std::vector<std::string> rows = lines_of(slurp(tmp.file("sweep") + "/sweep.csv"));
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "setup,tau,measure,mean_bits");
  CHECK(rows[1].rfind("none,-1,-,", 0) == 0);
  CHECK(rows[2].rfind("object,0.2", 0) == 0);
  CHECK(rows[5].rfind("all,-1,-,", 0) == 0);

  json m = load_manifest(tmp.file("sweep"));
  CHECK(m.at("command") == "sweep");
  CHECK(m.at("config").at("taus") == json::array({0.2, 0.5, 0.8}));
}

TEST_CASE("sweep rejects malformed or duplicate thresholds") {
  const Workspace& ws = workspace();
  TempDir tmp;
  const std::string base = "sweep --checkpoint " + ws.checkpoint + " --corpus " +
                           ws.corpus + " --out " + tmp.file("sweep");

  RunResult parse = run_cli(base + " --taus 0.2,abc");
  CHECK(parse.code == 2);
  CHECK(parse.err.find("cannot parse") != std::string::npos);

  CHECK(run_cli(base + " --taus 0.5,0.5").code == 2);
}

TEST_CASE("stats reports corpus statistics with optional extras") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli("stats --corpus " + ws.corpus + " --out " +
                        tmp.file("stats") + " --agreement --ks 1,3 --confusion");
  INFO(r.err);
  REQUIRE(r.code == 0);

  json stats = json::parse(slurp(tmp.file("stats") + "/stats.json"));
  CHECK(stats.at("num_images") == 12);
  CHECK(stats.at("num_examples") == 24);
  CHECK(stats.at("num_datapoints").get<int>() > 0);

  // Noise-free generator: the silver argmax always lands on the gold class.
  CHECK(r.out.find("silver top-1 contains gold: 1.0000") != std::string::npos);

  std::vector<std::string> agreement =
      lines_of(slurp(tmp.file("stats") + "/agreement.csv"));
  REQUIRE(agreement.size() == 3);
  CHECK(agreement[0] == "k,agreement");
  CHECK(agreement[1].rfind("1,", 0) == 0);
  CHECK(agreement[2].rfind("3,", 0) == 0);

  std::vector<std::string> confusion =
      lines_of(slurp(tmp.file("stats") + "/confusion.csv"));
  REQUIRE(!confusion.empty());
  CHECK(confusion[0] == "gold_category,pred_category,proportion");
  CHECK(exists(tmp.file("stats") + "/confusion.svg"));

  json m = load_manifest(tmp.file("stats"));
  CHECK(m.at("command") == "stats");
  const auto& outputs = m.at("outputs");
  CHECK(std::find(outputs.begin(), outputs.end(), "agreement.csv") != outputs.end());
  CHECK(std::find(outputs.begin(), outputs.end(), "confusion.svg") != outputs.end());
}

TEST_CASE("stats records the label-matched subset sizes") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult r = run_cli("stats --corpus " + ws.corpus + " --out " +
                        tmp.file("stats") + " --label-match");
  INFO(r.err);
  REQUIRE(r.code == 0);

  json stats = json::parse(slurp(tmp.file("stats") + "/stats.json"));
  CHECK(stats.at("label_match_total_examples") == 24);
  const int kept = stats.at("label_match_kept_examples").get<int>();
  CHECK(kept >= 1);
  CHECK(kept <= 24);
}

TEST_CASE("missing input files surface as runtime errors") {
  const Workspace& ws = workspace();
  TempDir tmp;
  RunResult diag = run_cli("diagnose --checkpoint " + tmp.file("nope.bin") +
                           " --corpus " + ws.corpus + " --out " +
                           tmp.file("diag"));
  CHECK(diag.code == 1);
  CHECK(diag.err.find("cannot open") != std::string::npos);

  RunResult stats = run_cli("stats --corpus " + tmp.file("nope.jsonl") +
                            " --out " + tmp.file("stats"));
  CHECK(stats.code == 1);
}
