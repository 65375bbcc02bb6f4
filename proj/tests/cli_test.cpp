// Copyright 2026 The avsr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "avsr/audio.hpp"
#include "avsr/ctc.hpp"
#include "avsr/rng.hpp"

namespace avsr {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(AVSR_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int count_lines_starting(const std::string& text, const std::string& prefix) {
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) n += line.rfind(prefix, 0) == 0;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("avsr_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return (dir_ / name).string();
  }

  std::string config(const std::string& modality, const std::string& sub, const std::string& extra = "") {
    return write(sub + ".yaml", "seed: 5\noutput_dir: " + (dir_ / sub).string() +
                                    "\nmodel: {preset: desk, modality: " + modality + ", d_model: 16}\n" +
                                    "train: {steps: 10, log_every: 5}\neval: {utterances: 3}\n" + extra);
  }

  fs::path dir_;
};

TEST_F(Cli, MissingConfigIsUsageErrorNamingPath) {
  const auto r = run("train --config /no/such/run.yaml");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("/no/such/run.yaml"), std::string::npos) << r.out;
}

TEST_F(Cli, InvalidConfigReportsLine) {
  const auto path = write("bad.yaml", "seed: 1\ntrain:\n  stepz: 3\n");
  const auto r = run("train -c " + path);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("bad.yaml:3:3: unknown key 'train.stepz'"), std::string::npos) << r.out;
}

TEST_F(Cli, BadFlagsAreUsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_EQ(run("train").code, 2);
}

TEST_F(Cli, SmokeTrainWritesOneCheckpointAndIsDeterministic) {
  const auto cfg = config("audio", "a");
  const auto r1 = run("train -c " + cfg);
  ASSERT_EQ(r1.code, 0) << r1.out;
  EXPECT_TRUE(fs::exists(dir_ / "a" / "config.yaml"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "metrics.jsonl"));
  int ckpts = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) ckpts += e.path().extension() == ".ckpt";
  EXPECT_EQ(ckpts, 1);
  const auto first = slurp(dir_ / "a" / "final.ckpt");
  const auto r2 = run("train -c " + cfg + " --output-dir " + (dir_ / "b").string());
  ASSERT_EQ(r2.code, 0) << r2.out;
  EXPECT_EQ(slurp(dir_ / "b" / "final.ckpt"), first);
  // The resolved config parses back and trains to the same bytes.
  const auto r3 = run("train -c " + (dir_ / "a" / "config.yaml").string() + " --output-dir " + (dir_ / "c").string());
  ASSERT_EQ(r3.code, 0) << r3.out;
  EXPECT_EQ(slurp(dir_ / "c" / "final.ckpt"), first);
}

TEST_F(Cli, EvalSnrSweepAndModes) {
  const auto cfg = config("audio-visual", "av");
  ASSERT_EQ(run("train -c " + cfg + " --steps 2").code, 0);
  const auto ckpt = (dir_ / "av" / "final.ckpt").string();
  const auto sweep = run("eval -c " + cfg + " --checkpoint " + ckpt + " --snr \"-5,0,5\" --greedy");
  ASSERT_EQ(sweep.code, 0) << sweep.out;
  EXPECT_EQ(count_lines_starting(sweep.out, "-5,") + count_lines_starting(sweep.out, "0,") +
                count_lines_starting(sweep.out, "5,"),
            3)
      << sweep.out;
  for (const char* mode : {"av", "av-masked-audio", "av-masked-video"}) {
    const auto r = run("eval -c " + cfg + " --checkpoint " + ckpt + " --greedy --mode " + mode);
    EXPECT_EQ(r.code, 0) << mode << r.out;
    EXPECT_NE(r.out.find("greedy_wer"), std::string::npos);
  }
  EXPECT_EQ(run("eval -c " + cfg + " --checkpoint " + ckpt + " --mode sideways").code, 2);
  EXPECT_EQ(run("eval -c " + cfg + " --checkpoint " + ckpt + " --mode ao").code, 2);
  EXPECT_EQ(run("eval -c " + cfg + " --checkpoint " + ckpt + " --snr \"-5,x\"").code, 2);
  // An untrained model misses the quality bar.
  EXPECT_EQ(run("eval -c " + cfg + " --checkpoint " + ckpt + " --greedy --max-wer 0.01").code, 1);
}

TEST_F(Cli, ManifestMismatchNamesTensor) {
  const auto ao = config("audio", "ao");
  ASSERT_EQ(run("train -c " + ao + " --steps 0").code, 0);
  const auto av = config("audio-visual", "av");
  const auto r = run("eval -c " + av + " --checkpoint " + (dir_ / "ao" / "final.ckpt").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("video_frontend"), std::string::npos) << r.out;
}

TEST_F(Cli, DecodeOneHotPosteriorsIsCollapseOfAlignment) {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t t = rng.uniform_int(1, 12), v = 5;
    LabelSeq alignment;
    std::ostringstream m;
    for (int64_t i = 0; i < t; ++i) {
      alignment.push_back(rng.uniform_int(0, v - 1));
      for (int64_t j = 0; j < v; ++j) m << (j == alignment.back() ? 1.0 : 0.0) << (j + 1 < v ? " " : "\n");
    }
    const auto path = write("post.txt", m.str());
    std::string expect;
    for (auto id : ctc_collapse(alignment)) expect += (expect.empty() ? "" : " ") + std::to_string(id);
    const auto greedy = run("decode --greedy --posteriors " + path);
    ASSERT_EQ(greedy.code, 0) << greedy.out;
    EXPECT_EQ(greedy.out, expect + "\n");
    // Beam search without an LM agrees on one-hot input.
    EXPECT_EQ(run("decode --posteriors " + path).out, greedy.out);
  }
  EXPECT_EQ(run("decode --posteriors " + write("ragged.txt", "1 0\n1\n")).code, 2);
  EXPECT_EQ(run("decode").code, 2);
}

TEST_F(Cli, DecodeToySet) {
  const auto cfg = config("audio", "ao");
  ASSERT_EQ(run("train -c " + cfg + " --steps 1").code, 0);
  const auto r = run("decode -c " + cfg + " --checkpoint " + (dir_ / "ao" / "final.ckpt").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines_starting(r.out, "# wer "), 1);
  EXPECT_EQ(count_lines_starting(r.out, "0\t") + count_lines_starting(r.out, "1\t") +
                count_lines_starting(r.out, "2\t"),
            3);
}

TEST_F(Cli, ProfileDefaultsSweepAndParamsCheck) {
  const auto cfg = write("full.yaml", "output_dir: " + (dir_ / "p").string() + "\nmodel: {preset: full}\ntask: {image_size: 96}\n");
  const auto r = run("profile -c " + cfg + " --check-params --sweep 100:1000:100");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("# input 10 s"), std::string::npos);
  EXPECT_NE(r.out.find("params cross-check: ok"), std::string::npos);
  const auto sweep = slurp(dir_ / "p" / "sweep.csv");
  EXPECT_EQ(count_lines_starting(sweep, "regular,") + count_lines_starting(sweep, "grouped(3),") +
                count_lines_starting(sweep, "patch(3),"),
            30);
  EXPECT_NE(slurp(dir_ / "p" / "profile.csv").find("avsr-flops/"), std::string::npos);
  EXPECT_EQ(run("profile -c " + cfg + " --seconds 0").code, 2);
}

TEST_F(Cli, GradCheckSelectionAndTrials) {
  const auto r = run("grad-check --module ctc --trials 2");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count_lines_starting(r.out, "PASS ctc/"), 4);
  EXPECT_EQ(count_lines_starting(r.out, "PASS ops/"), 0);
  EXPECT_EQ(run("grad-check --trials 0").code, 2);
  EXPECT_EQ(run("grad-check --module nonsense").code, 2);
}

TEST_F(Cli, MixNoiseHitsTargetSnr) {
  Waveform w;
  for (int i = 0; i < 16000; ++i) w.samples.push_back(0.3f * static_cast<float>(std::sin(0.05 * i)));
  const auto in = (dir_ / "clean.wav").string(), out = (dir_ / "noisy.wav").string();
  write_wav(in, w);
  for (const char* kind : {"--white", "--babble"}) {
    const auto r = run("mix-noise -i " + in + " -o " + out + " --snr 5 " + kind);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto pos = r.out.find("measured_snr_db ");
    ASSERT_NE(pos, std::string::npos);
    EXPECT_NEAR(std::stod(r.out.substr(pos + 16)), 5.0, 0.1) << kind;
    EXPECT_EQ(read_wav(out).samples.size(), w.samples.size());
  }
  EXPECT_EQ(run("mix-noise -i " + in + " -o " + out + " --snr 5").code, 2);
  EXPECT_EQ(run("mix-noise -i " + in + " -o " + out + " --snr 5 --white --babble").code, 2);
}

TEST_F(Cli, WerCommand) {
  const auto ref = write("ref.txt", "the cat sat\non the mat\n");
  const auto hyp = write("hyp.txt", "the cat sat\non a mat\n");
  const auto r = run("wer --ref " + ref + " --hyp " + hyp);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("wer 0.166667 (1/6 over 2 lines)"), std::string::npos) << r.out;
  EXPECT_EQ(run("wer --ref " + ref + " --hyp " + hyp + " --max-wer 0.1").code, 1);
  EXPECT_EQ(run("wer --ref " + ref + " --hyp " + write("short.txt", "x\n")).code, 2);
}

}  // namespace
}  // namespace avsr
