#pragma once

#include "modeconn/attacks.hpp"
#include "modeconn/curve.hpp"

namespace modeconn {

struct AdaptiveEndpoints {
    Model w1;
    Model w2;
};

// Attacker's counter to path repair: train two backdoored models on the
// poisoned data, then train a path over the same poisoned data with the
// endpoints unfrozen, and hand the moved endpoints to the defender.
AdaptiveEndpoints adaptive_backdoor_endpoints(const ModelSpec& spec,
                                              const LabeledDataset& poisoned,
                                              const TrainConfig& endpoint_cfg,
                                              const PathTrainConfig& path_cfg);

// Error-injection counterpart: inject errors into two clean models, connect
// them on clean data, then run joint penalized descent on w1, w2 and theta
// so the injected targets hold along the whole curve.
AdaptiveEndpoints adaptive_injection_endpoints(const ModelSpec& spec, const LabeledDataset& data,
                                               const InjectionSpec& injspec,
                                               const TrainConfig& endpoint_cfg,
                                               const PathTrainConfig& path_cfg);

}  // namespace modeconn
