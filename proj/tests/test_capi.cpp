#include <doctest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <kseg.h>

namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  auto p = fs::temp_directory_path() /
           ("kseg_capi_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("version and status names") {
  REQUIRE(kseg_version() != nullptr);
  CHECK(std::strlen(kseg_version()) > 0);
  CHECK(std::string(kseg_status_name(KSEG_OK)) == "ok");
  CHECK(std::string(kseg_status_name(KSEG_ERR_IO)) == "io");
  CHECK(std::string(kseg_status_name(KSEG_ERR_CONFIG)) == "config");
  CHECK(std::string(kseg_status_name(KSEG_ERR_SHAPE)) == "shape");
  CHECK(std::string(kseg_status_name(KSEG_ERR_NUMERIC)) == "numeric");
}

TEST_CASE("config handle: set, load, error reporting") {
  kseg_config* cfg = kseg_config_new();
  REQUIRE(cfg != nullptr);
  CHECK(kseg_config_set(cfg, "seed", "12") == KSEG_OK);
  CHECK(kseg_config_set(cfg, "model", "unet") == KSEG_OK);

  CHECK(kseg_config_set(cfg, "no_such_key", "1") == KSEG_ERR_CONFIG);
  CHECK(std::string(kseg_last_error()).find("no_such_key") != std::string::npos);
  CHECK(kseg_config_set(cfg, "seed", "abc") == KSEG_ERR_CONFIG);
  CHECK(kseg_config_set(nullptr, "seed", "1") == KSEG_ERR_INVALID_ARGUMENT);
  CHECK(kseg_config_load_file(cfg, "/nonexistent.cfg") == KSEG_ERR_IO);

  const auto dir = temp_dir();
  {
    std::ofstream os(dir / "run.cfg");
    os << "seed = 99\n";
  }
  CHECK(kseg_config_load_file(cfg, (dir / "run.cfg").string().c_str()) == KSEG_OK);
  kseg_config_free(cfg);
  kseg_config_free(nullptr);  // must be a no-op
  fs::remove_all(dir);
}

TEST_CASE("generate then train a tiny model through the C API") {
  const auto dir = temp_dir();
  kseg_config* cfg = kseg_config_new();
  REQUIRE(cfg != nullptr);
  kseg_config_set(cfg, "out", (dir / "data").string().c_str());
  kseg_config_set(cfg, "seed", "3");
  kseg_config_set(cfg, "pairs", "24");
  kseg_config_set(cfg, "disc_frames", "12");
  kseg_config_set(cfg, "frames", "8");
  kseg_config_set(cfg, "height", "48");
  kseg_config_set(cfg, "width", "48");
  REQUIRE(kseg_generate(cfg) == KSEG_OK);
  CHECK(fs::exists(dir / "data" / "manifest.jsonl"));
  CHECK(fs::exists(dir / "data" / "disc_manifest.jsonl"));
  CHECK(fs::exists(dir / "data" / "stream_gradual.jsonl"));
  CHECK(fs::exists(dir / "data" / "stream_removal.jsonl"));

  kseg_config_set(cfg, "model", "unet");
  kseg_config_set(cfg, "data", (dir / "data").string().c_str());
  kseg_config_set(cfg, "out", (dir / "out").string().c_str());
  kseg_config_set(cfg, "epochs", "1");
  kseg_config_set(cfg, "batch", "4");
  char ckpt[512];
  REQUIRE(kseg_train(cfg, ckpt, sizeof ckpt) == KSEG_OK);
  CHECK(fs::exists(ckpt));

  kseg_config_set(cfg, "checkpoint", ckpt);
  char report[2048];
  REQUIRE(kseg_eval(cfg, "val", report, sizeof report) == KSEG_OK);
  CHECK(std::string(report).find("slag") != std::string::npos);

  // truncation to a small buffer must stay NUL-terminated
  char tiny[8];
  REQUIRE(kseg_eval(cfg, "val", tiny, sizeof tiny) == KSEG_OK);
  CHECK(std::strlen(tiny) < sizeof tiny);

  kseg_config_free(cfg);
  fs::remove_all(dir);
}

TEST_CASE("failures surface the right status") {
  kseg_config* cfg = kseg_config_new();
  kseg_config_set(cfg, "model", "transformer");
  CHECK(kseg_train(cfg, nullptr, 0) == KSEG_ERR_CONFIG);
  kseg_config_set(cfg, "model", "unet");
  kseg_config_set(cfg, "data", "/nonexistent-dir");
  CHECK(kseg_train(cfg, nullptr, 0) != KSEG_OK);
  CHECK(kseg_stream(cfg, nullptr, 0) != KSEG_OK);
  kseg_config_free(cfg);
}
