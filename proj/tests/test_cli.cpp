#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

#include "support.hpp"

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; returns exit code and stdout.
Run avq_cli(const std::string& args) {
  const std::string cmd = std::string(AVQ_CLI) + " " + args + " 2>/dev/null";
  FILE* p = ::popen(cmd.c_str(), "r");
  Run r;
  if (!p) return r;
  std::array<char, 4096> buf;
  for (std::size_t n; (n = std::fread(buf.data(), 1, buf.size(), p)) > 0;) r.out.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("avq_cli_" + std::to_string(::getpid()) + "_" + name)).string();
}

}  // namespace

TEST(Cli, PayloadSizeDefaults) {
  auto r = avq_cli("payload-size");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("0.845 KB"), std::string::npos) << r.out;
  EXPECT_NE(avq_cli("payload-size --raw --precision 1").out.find("72.125 KB"), std::string::npos);
  EXPECT_NE(avq_cli("payload-size --raw").out.find("1154 KB"), std::string::npos);
  EXPECT_NE(avq_cli("payload-size --image 336 336 3").out.find("330.75 KB"), std::string::npos);
}

TEST(Cli, PayloadSizeCsv) {
  auto r = avq_cli("payload-size --csv --tokens 3 --bits 5 --codebooks 2");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "kind,kb,on_wire_bytes\npayload,0.004,36\n");
}

TEST(Cli, CompressRate) {
  auto r = avq_cli("compress-rate --csv");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "rate,numerator,denominator\n1365.33,4096,3\n");
}

TEST(Cli, ExitCodesByErrorKind) {
  EXPECT_EQ(avq_cli("").code, 2);
  EXPECT_EQ(avq_cli("payload-size --bits 17").code, 2);
  EXPECT_EQ(avq_cli("payload-size --set model.bogus=1").code, 2);
  EXPECT_EQ(avq_cli("eval --checkpoint " + temp_path("nope.ckpt")).code, 3);
  const std::string junk = temp_path("junk.ckpt");
  avq::write_file(junk, avq::Bytes{'n', 'o', 't'});
  EXPECT_EQ(avq_cli("eval --checkpoint " + junk).code, 3);
  std::filesystem::remove(junk);
}

TEST(Cli, GenTrainEvalRoundTrip) {
  const std::string shard = temp_path("d.bin"), ckpt = temp_path("m.ckpt");
  const std::string small =
      " --set model.image_size=8 --set model.patch_size=4 --set model.embed_dim=8 --set model.depth=1"
      " --set model.heads=2 --set data.samples_per_class=4";
  ASSERT_EQ(avq_cli("gen-data --out " + shard + small).code, 0);
  auto tr = avq_cli("train --csv --data " + shard + " --out " + ckpt + " --set train.epochs=2" + small);
  ASSERT_EQ(tr.code, 0);
  EXPECT_EQ(tr.out.substr(0, tr.out.find('\n')), "epoch,task_loss,commit_loss,total_loss,perplexity,val_accuracy");
  auto ev = avq_cli("eval --csv --checkpoint " + ckpt + " --data " + shard);
  EXPECT_EQ(ev.code, 0);
  EXPECT_EQ(ev.out.rfind("path,val_accuracy\nmonolithic,", 0), 0u) << ev.out;
  // A baseline checkpoint cannot serve the split.
  EXPECT_EQ(avq_cli("split-serve --role cloud --checkpoint " + ckpt).code, 2);
  std::filesystem::remove(shard);
  std::filesystem::remove(ckpt);
}
