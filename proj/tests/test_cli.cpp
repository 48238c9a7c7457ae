// End-to-end tests of the magicnet binary, driven as a subprocess.
// The binary path is injected by the build as MAGICNET_CLI_PATH.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "testutil.hpp"

using testutil::TempDir;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MAGICNET_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult r;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ProbRow {
  long long step = 0;
  double time_s = 0.0;
  double prob = 0.0;
};

std::vector<ProbRow> read_prob_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::getline(in, line);
  REQUIRE(line == "step_index,time_s,probability");
  std::vector<ProbRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ProbRow row;
    REQUIRE(std::sscanf(line.c_str(), "%lld,%lf,%lf", &row.step, &row.time_s, &row.prob) == 3);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run_cli("").exit_code == 2);
  CHECK(run_cli("frobnicate").exit_code == 2);
  CHECK(run_cli("synth --clips 3").exit_code == 2);          // missing --out
  CHECK(run_cli("infer --weights w").exit_code == 2);        // missing --wav/--out
  CHECK(run_cli("bench --weights w --reps 1").exit_code == 2);
  CHECK(run_cli("synth --out /tmp/x --clips 1 --noise purple").exit_code == 2);
}

TEST_CASE("runtime failures exit with code 1 and explain themselves") {
  TempDir dir("clifail");
  const auto r = run_cli("inspect --weights " + (dir / "missing.bin").string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("error:") != std::string::npos);

  // a corrupt weight file is a runtime failure, not a crash
  std::ofstream((dir / "junk.bin").string(), std::ios::binary) << "not a weight file";
  const auto r2 = run_cli("inspect --weights " + (dir / "junk.bin").string());
  CHECK(r2.exit_code == 1);
  CHECK(r2.output.find("error:") != std::string::npos);
}

TEST_CASE("synth is deterministic and writes a usable corpus") {
  TempDir dir("clisynth");
  const std::string common = " --clips 2 --segment-seconds 10 --seed 42 --noise car --snr-db 10";
  const auto r1 = run_cli("synth --out " + (dir / "a").string() + common);
  const auto r2 = run_cli("synth --out " + (dir / "b").string() + common);
  REQUIRE(r1.exit_code == 0);
  REQUIRE(r2.exit_code == 0);
  CHECK(r1.output.find("clips=2") != std::string::npos);
  CHECK(r1.output.find("speech_fraction=") != std::string::npos);

  // same seed, same corpus, byte for byte
  const std::string name = "clip00000_car_snr10";
  CHECK(slurp(dir / "a" / (name + ".wav")) == slurp(dir / "b" / (name + ".wav")));
  CHECK(slurp(dir / "a" / (name + ".lab")) == slurp(dir / "b" / (name + ".lab")));
  CHECK(slurp(dir / "a" / "manifest.tsv") == slurp(dir / "b" / "manifest.tsv"));

  // a different seed changes the audio
  const auto r3 = run_cli("synth --out " + (dir / "c").string() +
                          " --clips 2 --segment-seconds 10 --seed 43 --noise car --snr-db 10");
  REQUIRE(r3.exit_code == 0);
  CHECK(slurp(dir / "a" / (name + ".wav")) != slurp(dir / "c" / (name + ".wav")));
}

TEST_CASE("synth then train then infer then eval then bench then inspect") {
  TempDir dir("clipipe");
  const std::string corpus = (dir / "corpus").string();
  REQUIRE(run_cli("synth --out " + corpus +
                  " --clips 3 --segment-seconds 10 --seed 7 --snr-range 10:20")
              .exit_code == 0);
  const std::string manifest = corpus + "/manifest.tsv";

  const std::string weights = (dir / "model.bin").string();
  const std::string loss_csv = (dir / "loss.csv").string();
  const auto train = run_cli("train --corpus " + manifest + " --val " + manifest + " --out " +
                             weights + " --loss-csv " + loss_csv +
                             " --epochs 2 --patience 2 --batch-segments 3 --quiet");
  REQUIRE_MESSAGE(train.exit_code == 0, train.output);
  CHECK(train.output.find("best_epoch=") != std::string::npos);
  CHECK(train.output.find("best_val_loss=") != std::string::npos);
  {
    std::ifstream in(loss_csv);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,train_loss,val_loss");
  }

  // one wav from the corpus, inferred through both paths (the manifest holds
  // names relative to its own directory)
  const std::string wav = corpus + "/" + [&] {
    std::ifstream in(manifest);
    std::string line;
    std::getline(in, line);
    return line.substr(0, line.find('\t'));
  }();

  const std::string batch_csv = (dir / "batch.csv").string();
  const std::string stream_csv = (dir / "stream.csv").string();
  const auto infer_b = run_cli("infer --weights " + weights + " --wav " + wav + " --out " +
                               batch_csv);
  REQUIRE_MESSAGE(infer_b.exit_code == 0, infer_b.output);
  const auto infer_s = run_cli("infer --weights " + weights + " --wav " + wav + " --out " +
                               stream_csv + " --stream");
  REQUIRE_MESSAGE(infer_s.exit_code == 0, infer_s.output);

  const auto batch = read_prob_csv(batch_csv);
  const auto stream = read_prob_csv(stream_csv);
  REQUIRE_FALSE(batch.empty());
  REQUIRE(batch.size() == stream.size());
  CHECK(batch.size() == 125);  // 10 s -> 998 frames -> ceil(998/8) steps

  // each step stamps the end of its 80 ms hop
  CHECK(batch[0].step == 0);
  CHECK(batch[0].time_s == doctest::Approx(0.080));
  CHECK(batch[1].time_s == doctest::Approx(0.160));
  CHECK(batch.back().time_s == doctest::Approx(0.080 * static_cast<double>(batch.size())));

  double max_diff = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    CHECK(batch[i].prob >= 0.0);
    CHECK(batch[i].prob <= 1.0);
    max_diff = std::max(max_diff, std::abs(batch[i].prob - stream[i].prob));
  }
  CHECK(max_diff < 1e-5);

  // evaluation over the same corpus
  const std::string report_path = (dir / "report.txt").string();
  const std::string cond_csv = (dir / "cond.csv").string();
  const auto eval = run_cli("eval --weights " + weights + " --corpus " + manifest + " --report " +
                            report_path + " --csv " + cond_csv + " --threads 2");
  REQUIRE_MESSAGE(eval.exit_code == 0, eval.output);
  const std::string report = slurp(report_path);
  CHECK(report.find("clips=3") != std::string::npos);
  CHECK(report.find("steps=375") != std::string::npos);  // 3 * 125
  CHECK(report.find("auc=") != std::string::npos);
  CHECK(eval.output.find("clips=3") != std::string::npos);  // also printed
  const std::string cond = slurp(cond_csv);
  CHECK(cond.rfind("condition,steps,speech_steps,", 0) == 0);

  // fixed-threshold evaluation reports the policy
  const auto eval_fixed =
      run_cli("eval --weights " + weights + " --corpus " + manifest + " --threshold 0.5");
  REQUIRE(eval_fixed.exit_code == 0);
  CHECK(eval_fixed.output.find("threshold_policy=fixed") != std::string::npos);
  CHECK(eval_fixed.output.find("threshold=0.5") != std::string::npos);

  // real-time factor measurement
  const auto bench = run_cli("bench --weights " + weights + " --seconds 10 --reps 3");
  REQUIRE_MESSAGE(bench.exit_code == 0, bench.output);
  CHECK(bench.output.find("rtf=") != std::string::npos);
  CHECK(bench.output.find("repetitions=3") != std::string::npos);

  // inspect lists the tensors and the frozen parameter counts
  const auto inspect = run_cli("inspect --weights " + weights);
  REQUIRE_MESSAGE(inspect.exit_code == 0, inspect.output);
  CHECK(inspect.output.find("prologue.dw.w") != std::string::npos);
  CHECK(inspect.output.find("gru.l1.w_hh") != std::string::npos);
  CHECK(inspect.output.find("20541") != std::string::npos);
  CHECK(inspect.output.find("21501") != std::string::npos);
}
