// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

namespace magda {

struct PatientRecord
{
    std::string id;
    std::string image_ref;
    // Ground truth per label; a label missing from the map is unlabeled.
    std::map<std::string, bool> true_labels;
};

} // namespace magda
