#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace heatclt {

/// Replica ids are reduced in aligned chunks of this many ids: each chunk is
/// summed in id order starting from zero, then chunks are summed in order.
/// Batches whose boundaries are multiples of the chunk therefore merge to
/// bit-identical totals.
inline constexpr std::uint64_t kReductionChunk = 100;

/// Runs task(index) for index in [0, count) on `workers` threads. Each index
/// is processed exactly once; the first exception thrown is rethrown after
/// all workers stop.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& task);

/// Fixed-order chunked reduction over replica ids [first_id, first_id + count):
/// add(total, chunk) and add(chunk, item(index)) are called in a fixed order that
/// depends only on the ids, never on scheduling.
template <typename Acc, typename MakeZero, typename AddItem, typename AddAcc>
Acc chunked_reduce(std::uint64_t first_id, std::size_t count, MakeZero make_zero, AddItem add_item,
                   AddAcc add_acc) {
  Acc total = make_zero();
  std::size_t index = 0;
  while (index < count) {
    const std::uint64_t id = first_id + index;
    const std::uint64_t chunk_end = (id / kReductionChunk + 1) * kReductionChunk;
    Acc chunk = make_zero();
    while (index < count && first_id + index < chunk_end) {
      add_item(chunk, index);
      ++index;
    }
    add_acc(total, chunk);
  }
  return total;
}

}  // namespace heatclt
