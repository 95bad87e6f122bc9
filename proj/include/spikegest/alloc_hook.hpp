#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <new>

// Heap instrumentation for the benchmark harness: counts live transient bytes
// through global operator new/delete so peak working-set growth can be
// compared across attention implementations without touching process RSS.
//
// Binaries that run benchmarks place SPIKEGEST_INSTALL_ALLOC_HOOK() at file
// scope in exactly one translation unit; that defines the replacement
// operators. Everything else just reads the counters.

namespace spikegest::alloc_hook {

struct Counters {
  size_t live = 0;
  size_t peak = 0;
  bool installed = false;
};

inline Counters& counters() {
  static thread_local Counters c;
  return c;
}

inline bool installed() { return counters().installed; }
inline size_t live_bytes() { return counters().live; }
inline size_t peak_bytes() { return counters().peak; }
inline void reset_peak() { counters().peak = counters().live; }

// Bytes of transient allocation above the level at reset_peak().
inline size_t peak_above_baseline(size_t baseline_live) {
  size_t p = counters().peak;
  return p > baseline_live ? p - baseline_live : 0;
}

namespace detail {

// Layout: [base pointer, size, padding][payload]. The header keeps sized and
// unsized deallocation uniform and survives over-alignment.
constexpr size_t kHeader = 32;

inline void* allocate(size_t size, size_t alignment) {
  if (alignment < alignof(std::max_align_t)) alignment = alignof(std::max_align_t);
  size_t total = size + kHeader + alignment;
  void* base = std::malloc(total);
  if (!base) return nullptr;
  uintptr_t raw = reinterpret_cast<uintptr_t>(base) + kHeader;
  uintptr_t aligned = (raw + alignment - 1) & ~(alignment - 1);
  void** hdr = reinterpret_cast<void**>(aligned - kHeader);
  hdr[0] = base;
  reinterpret_cast<size_t*>(hdr)[1] = size;
  Counters& c = counters();
  c.live += size;
  if (c.live > c.peak) c.peak = c.live;
  return reinterpret_cast<void*>(aligned);
}

inline void deallocate(void* p) {
  if (!p) return;
  void** hdr = reinterpret_cast<void**>(reinterpret_cast<uintptr_t>(p) - kHeader);
  size_t size = reinterpret_cast<size_t*>(hdr)[1];
  Counters& c = counters();
  c.live -= size < c.live ? size : c.live;
  std::free(hdr[0]);
}

}  // namespace detail

}  // namespace spikegest::alloc_hook

#define SPIKEGEST_INSTALL_ALLOC_HOOK()                                                        \
  void* operator new(std::size_t size) {                                                     \
    void* p = ::spikegest::alloc_hook::detail::allocate(size, alignof(std::max_align_t));    \
    if (!p) throw std::bad_alloc();                                                          \
    return p;                                                                                \
  }                                                                                          \
  void* operator new[](std::size_t size) { return ::operator new(size); }                    \
  void* operator new(std::size_t size, std::align_val_t al) {                                \
    void* p = ::spikegest::alloc_hook::detail::allocate(size, static_cast<size_t>(al));      \
    if (!p) throw std::bad_alloc();                                                          \
    return p;                                                                                \
  }                                                                                          \
  void* operator new[](std::size_t size, std::align_val_t al) {                              \
    return ::operator new(size, al);                                                         \
  }                                                                                          \
  void* operator new(std::size_t size, const std::nothrow_t&) noexcept {                     \
    return ::spikegest::alloc_hook::detail::allocate(size, alignof(std::max_align_t));       \
  }                                                                                          \
  void* operator new[](std::size_t size, const std::nothrow_t&) noexcept {                   \
    return ::spikegest::alloc_hook::detail::allocate(size, alignof(std::max_align_t));       \
  }                                                                                          \
  void operator delete(void* p) noexcept { ::spikegest::alloc_hook::detail::deallocate(p); } \
  void operator delete[](void* p) noexcept {                                                 \
    ::spikegest::alloc_hook::detail::deallocate(p);                                          \
  }                                                                                          \
  void operator delete(void* p, std::size_t) noexcept {                                      \
    ::spikegest::alloc_hook::detail::deallocate(p);                                          \
  }                                                                                          \
  void operator delete[](void* p, std::size_t) noexcept {                                    \
    ::spikegest::alloc_hook::detail::deallocate(p);                                          \
  }                                                                                          \
  void operator delete(void* p, std::align_val_t) noexcept {                                 \
    ::spikegest::alloc_hook::detail::deallocate(p);                                          \
  }                                                                                          \
  void operator delete[](void* p, std::align_val_t) noexcept {                               \
    ::spikegest::alloc_hook::detail::deallocate(p);                                          \
  }                                                                                          \
  void operator delete(void* p, const std::nothrow_t&) noexcept {                            \
    ::spikegest::alloc_hook::detail::deallocate(p);                                          \
  }                                                                                          \
  void operator delete[](void* p, const std::nothrow_t&) noexcept {                          \
    ::spikegest::alloc_hook::detail::deallocate(p);                                          \
  }                                                                                          \
  namespace spikegest::alloc_hook {                                                          \
  namespace {                                                                                \
  const bool hook_marker = [] {                                                              \
    counters().installed = true;                                                             \
    return true;                                                                             \
  }();                                                                                       \
  }                                                                                          \
  }
