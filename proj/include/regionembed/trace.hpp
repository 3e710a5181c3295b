#pragma once

#include <string>
#include <vector>

#include "regionembed/common.hpp"

namespace regionembed {

// Optional capture of normalized attention distributions and fusion gates
// during a forward pass. Used by invariant tests and diagnostics; pass
// nullptr to skip recording.
struct ForwardTrace {
    struct Entry {
        std::string name;
        Dense values;
    };
    std::vector<Entry> attention;  // each row sums to 1
    std::vector<Entry> gates;      // sigmoid outputs in (0,1)

    void record_attention(const std::string& name, Dense values) {
        attention.push_back({name, std::move(values)});
    }
    void record_gate(const std::string& name, Dense values) {
        gates.push_back({name, std::move(values)});
    }
};

}  // namespace regionembed
