#include "s2a/s2a_c.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("s2a_capi_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct ConfigHandle {
  s2a_config* cfg = nullptr;
  ConfigHandle() : cfg(s2a_config_new()) {}
  ~ConfigHandle() { s2a_config_free(cfg); }
};

}  // namespace

TEST_CASE("version and error state basics") {
  CHECK(std::strcmp(s2a_version(), "") != 0);
  ConfigHandle h;
  REQUIRE(h.cfg != nullptr);
  CHECK(s2a_config_set(h.cfg, "train.lr", "0.02") == S2A_OK);
}

TEST_CASE("config set rejects bad keys and values with messages") {
  ConfigHandle h;
  REQUIRE(h.cfg != nullptr);

  CHECK(s2a_config_set(h.cfg, "no.such.key", "1") == S2A_ERR_VALIDATION);
  CHECK(std::string(s2a_last_error()).find("no.such.key") != std::string::npos);

  CHECK(s2a_config_set(h.cfg, "train.lr", "quick") == S2A_ERR_VALIDATION);
  CHECK(std::string(s2a_last_error()).find("train.lr") != std::string::npos);

  CHECK(s2a_config_set(nullptr, "seed", "1") == S2A_ERR_VALIDATION);
  CHECK(s2a_config_set(h.cfg, nullptr, "1") == S2A_ERR_VALIDATION);
}

TEST_CASE("config load reports missing and malformed files") {
  s2a_config* cfg = nullptr;
  CHECK(s2a_config_load("/nonexistent/path.cfg", &cfg) == S2A_ERR_VALIDATION);
  CHECK(cfg == nullptr);
  CHECK(std::strlen(s2a_last_error()) > 0);

  TempDir dir("load");
  const fs::path good = dir.path / "good.cfg";
  std::ofstream(good) << "train.lr = 0.005\nseed = 3\n";
  CHECK(s2a_config_load(good.string().c_str(), &cfg) == S2A_OK);
  REQUIRE(cfg != nullptr);
  s2a_config_free(cfg);
  cfg = nullptr;

  const fs::path bad = dir.path / "bad.cfg";
  std::ofstream(bad) << "this is not a key value line\n";
  CHECK(s2a_config_load(bad.string().c_str(), &cfg) == S2A_ERR_VALIDATION);
  CHECK(cfg == nullptr);
}

TEST_CASE("run validates command names and preconditions") {
  ConfigHandle h;
  REQUIRE(h.cfg != nullptr);
  CHECK(s2a_run(h.cfg, "explode") == S2A_ERR_VALIDATION);
  CHECK(std::string(s2a_last_error()).find("explode") != std::string::npos);
  CHECK(s2a_run(nullptr, "generate") == S2A_ERR_VALIDATION);
  CHECK(s2a_run(h.cfg, nullptr) == S2A_ERR_VALIDATION);

  // A config whose validation fails surfaces as a validation error.
  TempDir dir("badcfg");
  CHECK(s2a_config_set(h.cfg, "data_dir", dir.path.string().c_str()) == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "train.batch", "0") == S2A_OK);
  CHECK(s2a_run(h.cfg, "generate") == S2A_ERR_VALIDATION);

  // Detection without a trained checkpoint is also a validation error.
  ConfigHandle h2;
  CHECK(s2a_config_set(h2.cfg, "data_dir", dir.path.string().c_str()) == S2A_OK);
  CHECK(s2a_run(h2.cfg, "detect") == S2A_ERR_VALIDATION);
}

TEST_CASE("generate and split run through the C interface") {
  TempDir dir("run");
  ConfigHandle h;
  REQUIRE(h.cfg != nullptr);
  CHECK(s2a_config_set(h.cfg, "data_dir", dir.path.string().c_str()) == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "synthetic.images", "12") == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "synthetic.size", "32") == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "synthetic.bands", "8") == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "seed", "5") == S2A_OK);

  CHECK(s2a_run(h.cfg, "generate") == S2A_OK);
  CHECK(fs::exists(dir.path / "cubes" / "img_000.hdr"));
  CHECK(fs::exists(dir.path / "annotations" / "img_011.txt"));

  CHECK(s2a_run(h.cfg, "split") == S2A_OK);
  CHECK(fs::exists(dir.path / "splits" / "train.txt"));
  CHECK(fs::exists(dir.path / "splits" / "val.txt"));
  CHECK(fs::exists(dir.path / "splits" / "test.txt"));

  CHECK(s2a_run(h.cfg, "bandselect") == S2A_OK);
  CHECK(fs::exists(dir.path / "bandselect.txt"));
  CHECK(s2a_run(h.cfg, "pca") == S2A_OK);
  CHECK(fs::exists(dir.path / "pca.txt"));
}

TEST_CASE("out_dir override redirects outputs") {
  TempDir data("redirect_data"), out("redirect_out");
  ConfigHandle h;
  REQUIRE(h.cfg != nullptr);
  CHECK(s2a_config_set(h.cfg, "data_dir", data.path.string().c_str()) == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "synthetic.images", "4") == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "synthetic.size", "32") == S2A_OK);
  CHECK(s2a_config_set(h.cfg, "synthetic.bands", "8") == S2A_OK);
  CHECK(s2a_run(h.cfg, "generate") == S2A_OK);

  CHECK(s2a_config_set(h.cfg, "out_dir", out.path.string().c_str()) == S2A_OK);
  CHECK(s2a_run(h.cfg, "decouple") == S2A_OK);
  CHECK(fs::exists(out.path / "images" / "img_000_sa.ppm"));
  CHECK(fs::exists(out.path / "images" / "img_000_se.ppm"));
  CHECK(!fs::exists(data.path / "images"));
}
