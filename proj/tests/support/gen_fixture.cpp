// SPDX-License-Identifier: Apache-2.0
// Regenerates data/synthetic/script.json from the bundled guidelines.
#include "faithful_script.hpp"
#include "fixtures.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    using namespace magda::fixture;
    const auto out = argc > 1 ? std::filesystem::path(argv[1]) : synthetic_dir() / "script.json";
    write_file(out, faithful_script(synthetic_guidelines()).dump(2) + "\n");
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}
