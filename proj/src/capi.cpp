#include "regionembed.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "json.hpp"
#include "regionembed/common.hpp"
#include "regionembed/data.hpp"
#include "regionembed/kg.hpp"
#include "regionembed/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out != nullptr) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

template <typename Fn>
regionembed_status guarded(Fn&& fn) {
    try {
        fn();
        return REGIONEMBED_OK;
    } catch (const regionembed::NumericError& e) {
        set_error(e.what());
        return REGIONEMBED_E_NUMERIC;
    } catch (const std::exception& e) {
        set_error(e.what());
        return REGIONEMBED_E_VALIDATION;
    }
}

// Reads the embedding matrix this context's output directory holds.
regionembed::Dense load_ctx_embeddings(const nlohmann::json& config) {
    const nlohmann::json resolved =
        regionembed::pipeline::merge_config(regionembed::pipeline::default_config(), config);
    const std::string regions = resolved.at("data").at("regions").get<std::string>();
    if (regions.empty()) {
        throw regionembed::ValidationError("config: data.regions is required to read embeddings");
    }
    const regionembed::RegionRegistry registry = regionembed::load_regions(regions);
    const std::string path = resolved.at("out").get<std::string>() + "/embeddings.csv";
    regionembed::RegionVectors vectors = regionembed::load_region_vectors_csv(path, registry);
    for (size_t i = 0; i < vectors.flagged.size(); ++i) {
        if (vectors.flagged[i]) {
            throw regionembed::ValidationError(path + ": missing embedding for region \"" +
                                               registry.id(static_cast<int>(i)) + "\"");
        }
    }
    return vectors.vectors;
}

}  // namespace

struct regionembed_ctx {
    nlohmann::json config;
};

extern "C" {

const char* regionembed_version(void) { return "0.1.0"; }

const char* regionembed_last_error(void) { return g_last_error.c_str(); }

regionembed_ctx* regionembed_open(const char* config_json) {
    if (config_json == nullptr) {
        set_error("regionembed_open: config_json is null");
        return nullptr;
    }
    try {
        nlohmann::json config = nlohmann::json::parse(config_json);
        if (!config.is_object()) {
            throw regionembed::ValidationError("config must be a JSON object");
        }
        return new regionembed_ctx{std::move(config)};
    } catch (const std::exception& e) {
        set_error(e.what());
        return nullptr;
    }
}

void regionembed_close(regionembed_ctx* ctx) { delete ctx; }

regionembed_status regionembed_run(regionembed_ctx* ctx, const char* subcommand,
                                   char** report_json) {
    if (ctx == nullptr || subcommand == nullptr) {
        set_error("regionembed_run: null context or subcommand");
        return REGIONEMBED_E_USAGE;
    }
    return guarded([&] {
        const nlohmann::json report =
            regionembed::pipeline::run_subcommand(subcommand, ctx->config);
        if (report_json != nullptr) *report_json = dup_string(report.dump(2));
    });
}

regionembed_status regionembed_embedding_shape(regionembed_ctx* ctx, size_t* rows, size_t* cols) {
    if (ctx == nullptr || rows == nullptr || cols == nullptr) {
        set_error("regionembed_embedding_shape: null argument");
        return REGIONEMBED_E_USAGE;
    }
    return guarded([&] {
        const regionembed::Dense e = load_ctx_embeddings(ctx->config);
        *rows = static_cast<size_t>(e.rows);
        *cols = static_cast<size_t>(e.cols);
    });
}

regionembed_status regionembed_embedding_copy(regionembed_ctx* ctx, double* buffer,
                                              size_t buffer_len) {
    if (ctx == nullptr || buffer == nullptr) {
        set_error("regionembed_embedding_copy: null argument");
        return REGIONEMBED_E_USAGE;
    }
    return guarded([&] {
        const regionembed::Dense e = load_ctx_embeddings(ctx->config);
        if (buffer_len < e.v.size()) {
            throw regionembed::ContractError("embedding buffer too small: need " +
                                             std::to_string(e.v.size()) + " doubles");
        }
        std::memcpy(buffer, e.v.data(), e.v.size() * sizeof(double));
    });
}

void regionembed_free(char* ptr) { std::free(ptr); }

}  // extern "C"
