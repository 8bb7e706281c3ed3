// Global allocation is rounded up to 64-byte alignment. Eigen's vectorized
// reductions peel a head whose length depends on the runtime address of the
// data, so with malloc's 16-byte guarantee the summation order, and thereby
// the last bits of a result, could change between identical runs. Fixing the
// alignment of every buffer makes numeric output a pure function of inputs.

#include <cstdlib>
#include <new>

namespace {

constexpr std::size_t kAlign = 64;

void* allocate(std::size_t n, std::size_t align) {
  if (align < kAlign) align = kAlign;
  const std::size_t size = ((n ? n : 1) + align - 1) / align * align;
  for (;;) {
    if (void* p = std::aligned_alloc(align, size)) return p;
    std::new_handler h = std::get_new_handler();
    if (!h) return nullptr;
    h();
  }
}

void* allocate_or_throw(std::size_t n, std::size_t align) {
  if (void* p = allocate(n, align)) return p;
  throw std::bad_alloc();
}

}  // namespace

void* operator new(std::size_t n) { return allocate_or_throw(n, kAlign); }
void* operator new[](std::size_t n) { return allocate_or_throw(n, kAlign); }
void* operator new(std::size_t n, std::align_val_t a) { return allocate_or_throw(n, static_cast<std::size_t>(a)); }
void* operator new[](std::size_t n, std::align_val_t a) { return allocate_or_throw(n, static_cast<std::size_t>(a)); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept { return allocate(n, kAlign); }
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return allocate(n, kAlign); }

void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::align_val_t) noexcept { std::free(p); }
void operator delete(void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t, std::align_val_t) noexcept { std::free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { std::free(p); }
