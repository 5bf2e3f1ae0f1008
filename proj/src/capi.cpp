#include "s2a/s2a_c.h"

#include <new>
#include <string>

#include "s2a/common.hpp"
#include "s2a/config.hpp"
#include "s2a/pipeline.hpp"

struct s2a_config {
  s2a::PipelineConfig cfg;
};

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return S2A_OK;
  } catch (const s2a::NumericError& e) {
    return fail(S2A_ERR_NUMERIC, e.what());
  } catch (const std::exception& e) {
    return fail(S2A_ERR_VALIDATION, e.what());
  }
}

}  // namespace

extern "C" {

s2a_config* s2a_config_new(void) { return new (std::nothrow) s2a_config(); }

int s2a_config_load(const char* path, s2a_config** out) {
  if (!path || !out) return fail(S2A_ERR_VALIDATION, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto* handle = new s2a_config();
    try {
      handle->cfg = s2a::PipelineConfig::load(path);
    } catch (...) {
      delete handle;
      throw;
    }
    *out = handle;
  });
}

int s2a_config_set(s2a_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(S2A_ERR_VALIDATION, "null argument");
  return guarded([&] { cfg->cfg.set(key, value); });
}

void s2a_config_free(s2a_config* cfg) { delete cfg; }

int s2a_run(const s2a_config* cfg, const char* command) {
  if (!cfg || !command) return fail(S2A_ERR_VALIDATION, "null argument");
  return guarded([&] { s2a::run_command(command, cfg->cfg); });
}

const char* s2a_last_error(void) { return g_last_error.c_str(); }

const char* s2a_version(void) { return "0.1.0"; }

}  // extern "C"
