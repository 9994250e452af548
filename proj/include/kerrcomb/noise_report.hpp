#pragma once

#include <cmath>
#include <string>

namespace kerrcomb {

struct NoiseReport {
    std::string label;
    double variance_snu = 0.0;  // raw variance / SNL
    double snl = 0.0;           // shot-noise level, in the producer's units
    double dB = 0.0;            // 10 log10(variance_snu)
    std::string snl_definition;
};

inline NoiseReport make_noise_report(std::string label, double raw, double snl,
                                     std::string snl_definition) {
    NoiseReport r;
    r.label = std::move(label);
    r.snl = snl;
    r.variance_snu = raw / snl;
    r.dB = 10.0 * std::log10(r.variance_snu);
    r.snl_definition = std::move(snl_definition);
    return r;
}

}  // namespace kerrcomb
