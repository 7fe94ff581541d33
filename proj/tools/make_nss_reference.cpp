// Regenerates data/nss_ref.json, the reference statistics for the built-in
// no-reference naturalness metric, from the procedural HR corpus.
#include <cstdio>

#include "textovsr/evaltool.hpp"
#include "textovsr/train.hpp"

int main(int argc, char** argv) {
    using namespace tovsr;
    std::string out = argc > 1 ? argv[1] : "data/nss_ref.json";
    std::vector<Tensorf> corpus;
    for (uint64_t seed = 1; seed <= 24; ++seed)
        for (int t = 0; t < 3; ++t)
            corpus.push_back(train::demo_frame(128, 128, seed * 77, t * 2));
    evaltool::NssReference ref = evaltool::fit_nss_reference(corpus);
    evaltool::write_nss_reference(out, ref);
    std::printf("wrote %s (dim %d, hash %s) from %zu frames\n", out.c_str(), ref.dim,
                ref.payload_hash().c_str(), corpus.size());
    return 0;
}
