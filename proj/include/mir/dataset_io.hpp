#ifndef MIR_DATASET_IO_HPP
#define MIR_DATASET_IO_HPP

#include <string>
#include <vector>

#include "mir/pipeline.hpp"

namespace mir::dataset {

// Prepared-split container: a small header followed by one record per
// example. Each record carries the label (u8 class id), provenance, and the
// window payload in the frame-container encoding — signal windows are stored
// with dims [L,C,1,1].
void write_examples(const std::string& path,
                    const std::vector<pipeline::LabeledExample>& examples);

std::vector<pipeline::LabeledExample> read_examples(const std::string& path);

}  // namespace mir::dataset

#endif  // MIR_DATASET_IO_HPP
