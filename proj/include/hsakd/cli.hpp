// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace hsakd {

/// Entry point of the `hsakd` tool. Returns 0 on success, 2 on usage errors
/// and 1 on runtime failures.
int cli_main(int argc, char** argv);

}  // namespace hsakd
