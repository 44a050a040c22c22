#!/usr/bin/env python3
"""Regenerates corpus/desk/*.json.

Each bundle is freestanding (own _start and syscalls) so it builds for both
-m32 and -m64 without a libc. Expected outputs come from the Python reference
next to each function; `--check` additionally compiles every bundle at
O0/O2 for both bitnesses and compares.
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "desk")

CFLAGS = [
    "-ffreestanding", "-nostdlib", "-static", "-fno-pie", "-no-pie",
    "-fno-stack-protector", "-fno-tree-loop-distribute-patterns",
    "-fcf-protection=none", "-w",
]

RUNTIME = r'''typedef unsigned long size_t;

#if defined(__x86_64__)
__asm__(".text\n.globl _start\n_start:\n"
        "\txor %ebp, %ebp\n\tmov (%rsp), %rdi\n\tlea 8(%rsp), %rsi\n"
        "\tand $-16, %rsp\n\tcall main\n\tmov %eax, %edi\n"
        "\tmov $60, %eax\n\tsyscall\n\thlt\n");

static long rt_write(int fd, const void *buf, size_t len)
{
    long ret;
    __asm__ volatile("syscall" : "=a"(ret) : "a"(1L), "D"((long)fd), "S"(buf), "d"(len) : "rcx", "r11", "memory");
    return ret;
}
#else
__asm__(".text\n.globl _start\n_start:\n"
        "\txor %ebp, %ebp\n\tmov (%esp), %eax\n\tlea 4(%esp), %ecx\n"
        "\tand $-16, %esp\n\tsub $8, %esp\n\tpush %ecx\n\tpush %eax\n"
        "\tcall main\n\tmov %eax, %ebx\n\tmov $1, %eax\n\tint $0x80\n\thlt\n");

static long rt_write(int fd, const void *buf, size_t len)
{
    long ret;
    __asm__ volatile("int $0x80" : "=a"(ret) : "a"(4L), "b"((long)fd), "c"(buf), "d"(len) : "memory");
    return ret;
}
#endif

void *memset(void *dst, int c, size_t n)
{
    unsigned char *p = dst;
    while (n--)
        *p++ = (unsigned char)c;
    return dst;
}

void *memcpy(void *dst, const void *src, size_t n)
{
    unsigned char *d = dst;
    const unsigned char *s = src;
    while (n--)
        *d++ = *s++;
    return dst;
}

static size_t rt_strlen(const char *s)
{
    size_t n = 0;
    while (s[n])
        n++;
    return n;
}

static void print_str(const char *s)
{
    rt_write(1, s, rt_strlen(s));
}

static void print_int(long v)
{
    char buf[24];
    int i = 23;
    unsigned long u = v < 0 ? -(unsigned long)v : (unsigned long)v;
    buf[i] = 0;
    do {
        buf[--i] = (char)('0' + u % 10);
        u /= 10;
    } while (u);
    if (v < 0)
        buf[--i] = '-';
    print_str(buf + i);
}

static void print_nl(void)
{
    rt_write(1, "\n", 1);
}

static long rt_atol(const char *s)
{
    long sign = 1, v = 0;
    if (*s == '-') {
        sign = -1;
        s++;
    }
    while (*s >= '0' && *s <= '9')
        v = v * 10 + (*s++ - '0');
    return sign * v;
}
'''


def scaffold(decls, main_body):
    return RUNTIME + "\n" + decls.strip() + "\n\nint main(int argc, char **argv)\n{\n" + main_body.rstrip() + "\n    return 0;\n}\n"


def int_main(fn, arity):
    args = ", ".join(f"rt_atol(argv[{i + 1}])" for i in range(arity))
    return f"    print_int({fn}({args}));\n    print_nl();"


BUNDLES = []


def bundle(name, source, decls, main_body, cases, ref, bitness=(32, 64)):
    examples = []
    for args in cases:
        args = [str(a) for a in args]
        examples.append({"args": args, "expected_stdout": ref(*args), "expected_return": 0})
    BUNDLES.append({
        "func_name": name,
        "source": source.strip() + "\n",
        "scaffold": scaffold(decls, main_body),
        "io_examples": examples,
        "bitness": list(bitness),
        "cflags": CFLAGS,
    })


def line(v):
    return f"{v}\n"


def c_div(a, b):
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def c_mod(a, b):
    return a - b * c_div(a, b)


def u32(v):
    return v & 0xFFFFFFFF


bundle("add", """
int add(int a, int b)
{
    return a + b;
}
""", "int add(int a, int b);", int_main("add", 2),
    [(1, 2), (-7, 3), (100, 250)], lambda a, b: line(int(a) + int(b)))

bundle("max3", """
int max3(int a, int b, int c)
{
    int m = a;
    if (b > m)
        m = b;
    if (c > m)
        m = c;
    return m;
}
""", "int max3(int a, int b, int c);", int_main("max3", 3),
    [(1, 2, 3), (9, -4, 2), (-5, -1, -9), (4, 4, 1)], lambda a, b, c: line(max(int(a), int(b), int(c))))

bundle("abs_diff", """
int abs_diff(int a, int b)
{
    if (a > b)
        return a - b;
    else
        return b - a;
}
""", "int abs_diff(int a, int b);", int_main("abs_diff", 2),
    [(3, 10), (10, 3), (-4, 4)], lambda a, b: line(abs(int(a) - int(b))))


def fact(n):
    r = 1
    for i in range(2, n + 1):
        r = u32(r * i)
    return r if r < 2**31 else r - 2**32


bundle("factorial", """
int factorial(int n)
{
    int r = 1;
    int i;
    for (i = 2; i <= n; i++)
        r *= i;
    return r;
}
""", "int factorial(int n);", int_main("factorial", 1),
    [(0,), (5,), (10,), (12,)], lambda n: line(fact(int(n))))


def fib(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


bundle("fib", """
int fib(int n)
{
    int a = 0, b = 1, t;
    while (n-- > 0) {
        t = a + b;
        a = b;
        b = t;
    }
    return a;
}
""", "int fib(int n);", int_main("fib", 1),
    [(0,), (1,), (10,), (30,)], lambda n: line(fib(int(n))))


def gcd(a, b):
    while b:
        a, b = b, a % b
    return a


bundle("gcd", """
int gcd(int a, int b)
{
    while (b != 0) {
        int t = a % b;
        a = b;
        b = t;
    }
    return a;
}
""", "int gcd(int a, int b);", int_main("gcd", 2),
    [(12, 18), (17, 5), (100, 75), (0, 9)], lambda a, b: line(gcd(int(a), int(b))))


def is_prime(n):
    if n < 2:
        return 0
    d = 2
    while d * d <= n:
        if n % d == 0:
            return 0
        d += 1
    return 1


bundle("is_prime", """
int is_prime(int n)
{
    int d;
    if (n < 2)
        return 0;
    for (d = 2; d * d <= n; d++) {
        if (n % d == 0)
            return 0;
    }
    return 1;
}
""", "int is_prime(int n);", int_main("is_prime", 1),
    [(1,), (2,), (15,), (97,), (7919,)], lambda n: line(is_prime(int(n))))


def collatz(n):
    steps = 0
    while n != 1:
        n = n // 2 if n % 2 == 0 else 3 * n + 1
        steps += 1
    return steps


bundle("collatz_steps", """
int collatz_steps(int n)
{
    int steps = 0;
    while (n != 1) {
        if (n % 2 == 0)
            n = n / 2;
        else
            n = 3 * n + 1;
        steps++;
    }
    return steps;
}
""", "int collatz_steps(int n);", int_main("collatz_steps", 1),
    [(1,), (6,), (27,)], lambda n: line(collatz(int(n))))

bundle("sum_digits", """
int sum_digits(int n)
{
    int s = 0;
    if (n < 0)
        n = -n;
    while (n > 0) {
        s += n % 10;
        n /= 10;
    }
    return s;
}
""", "int sum_digits(int n);", int_main("sum_digits", 1),
    [(0,), (1234,), (-987,)], lambda n: line(sum(int(c) for c in str(abs(int(n))))))


def reverse_number(n):
    r = 0
    while n != 0:
        r = r * 10 + c_mod(n, 10)
        n = c_div(n, 10)
    return r


bundle("reverse_number", """
int reverse_number(int n)
{
    int r = 0;
    while (n != 0) {
        r = r * 10 + n % 10;
        n /= 10;
    }
    return r;
}
""", "int reverse_number(int n);", int_main("reverse_number", 1),
    [(1234,), (-560,), (7,)], lambda n: line(reverse_number(int(n))))

bundle("popcount", """
int popcount(unsigned int x)
{
    int c = 0;
    while (x) {
        x &= x - 1;
        c++;
    }
    return c;
}
""", "int popcount(unsigned int x);", int_main("popcount", 1),
    [(0,), (255,), (-1,), (1024,)], lambda x: line(bin(u32(int(x))).count("1")))

bundle("count_vowels", """
int count_vowels(const char *s)
{
    int n = 0;
    for (; *s; s++) {
        switch (*s | 32) {
        case 'a':
        case 'e':
        case 'i':
        case 'o':
        case 'u':
            n++;
            break;
        default:
            break;
        }
    }
    return n;
}
""", "int count_vowels(const char *s);", "    print_int(count_vowels(argv[1]));\n    print_nl();",
    [("hello",), ("AEIOUxyz",), ("rhythm",)],
    lambda s: line(sum(1 for c in s if chr(ord(c) | 32) in "aeiou")))

bundle("my_strlen", """
int my_strlen(const char *s)
{
    const char *p = s;
    while (*p)
        p++;
    return (int)(p - s);
}
""", "int my_strlen(const char *s);", "    print_int(my_strlen(argv[1]));\n    print_nl();",
    [("",), ("abc",), ("decompile",)], lambda s: line(len(s)))


def classify(n):
    if n < 0:
        return "negative"
    if n == 0:
        return "zero"
    if n < 10:
        return "small"
    if n < 1000:
        return "medium"
    return "large"


bundle("classify", """
const char *classify(int n)
{
    if (n < 0)
        return "negative";
    if (n == 0)
        return "zero";
    if (n < 10)
        return "small";
    if (n < 1000)
        return "medium";
    return "large";
}
""", "const char *classify(int n);", "    print_str(classify((int)rt_atol(argv[1])));\n    print_nl();",
    [(-3,), (0,), (7,), (500,), (123456,)], lambda n: line(classify(int(n))))

DATA = [29, 3, 17, 8, 42, 1, 15, 4]

bundle("sort_data", """
int data[8] = {29, 3, 17, 8, 42, 1, 15, 4};

int sort_data(int k)
{
    int i, j, t;
    for (i = 0; i < 8; i++) {
        for (j = 0; j + 1 < 8 - i; j++) {
            if (data[j] > data[j + 1]) {
                t = data[j];
                data[j] = data[j + 1];
                data[j + 1] = t;
            }
        }
    }
    return data[k];
}
""", "int sort_data(int k);", int_main("sort_data", 1),
    [(0,), (3,), (7,)], lambda k: line(sorted(DATA)[int(k)]))

bundle("accumulate", """
int total;
int calls;

int accumulate(int n)
{
    int i;
    for (i = 1; i <= n; i++)
        total += i;
    calls++;
    return total + calls;
}
""", "int accumulate(int n);", int_main("accumulate", 1),
    [(0,), (4,), (100,)], lambda n: line(sum(range(1, int(n) + 1)) + 1))

PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29]

bundle("nth_prime", """
const int prime_table[10] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29};

int nth_prime(int i)
{
    if (i < 0 || i >= 10)
        return -1;
    return prime_table[i];
}
""", "int nth_prime(int i);", int_main("nth_prime", 1),
    [(0,), (4,), (9,), (10,), (-2,)], lambda i: line(PRIMES[int(i)] if 0 <= int(i) < 10 else -1))

SORTED = [1, 4, 9, 16, 25, 36, 49, 64, 81, 100, 121, 144]


def bsearch(key):
    lo, hi = 0, len(SORTED) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        if SORTED[mid] == key:
            return mid
        if SORTED[mid] < key:
            lo = mid + 1
        else:
            hi = mid - 1
    return -1


bundle("find_square", """
const int squares[12] = {1, 4, 9, 16, 25, 36, 49, 64, 81, 100, 121, 144};

int find_square(int key)
{
    int lo = 0, hi = 11;
    while (lo <= hi) {
        int mid = (lo + hi) / 2;
        if (squares[mid] == key)
            return mid;
        if (squares[mid] < key)
            lo = mid + 1;
        else
            hi = mid - 1;
    }
    return -1;
}
""", "int find_square(int key);", int_main("find_square", 1),
    [(1,), (49,), (144,), (50,)], lambda k: line(bsearch(int(k))))

bundle("power_mod", """
int power_mod(int base, int exp, int mod)
{
    int result = 1;
    base %= mod;
    while (exp > 0) {
        if (exp & 1)
            result = (result * base) % mod;
        base = (base * base) % mod;
        exp >>= 1;
    }
    return result;
}
""", "int power_mod(int base, int exp, int mod);", int_main("power_mod", 3),
    [(2, 10, 1000), (3, 13, 97), (7, 0, 13)], lambda b, e, m: line(pow(int(b), int(e), int(m))))


def triangle(a, b, c):
    if a + b <= c or a + c <= b or b + c <= a:
        return 0
    if a == b and b == c:
        return 3
    if a == b or b == c or a == c:
        return 2
    return 1


bundle("triangle_kind", """
int triangle_kind(int a, int b, int c)
{
    if (a + b <= c || a + c <= b || b + c <= a)
        return 0;
    if (a == b && b == c)
        return 3;
    if (a == b || b == c || a == c)
        return 2;
    return 1;
}
""", "int triangle_kind(int a, int b, int c);", int_main("triangle_kind", 3),
    [(3, 4, 5), (2, 2, 2), (2, 2, 3), (1, 2, 8)], lambda a, b, c: line(triangle(int(a), int(b), int(c))))

WORDS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"]

bundle("digit_word", """
const char *const digit_names[10] = {
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
};

const char *digit_word(int d)
{
    if (d < 0 || d > 9)
        return "?";
    return digit_names[d];
}
""", "const char *digit_word(int d);", "    print_str(digit_word((int)rt_atol(argv[1])));\n    print_nl();",
    [(0,), (7,), (12,)], lambda d: line(WORDS[int(d)] if 0 <= int(d) <= 9 else "?"))


def djb2(s):
    h = 5381
    for ch in s.encode():
        h = u32(h * 33 + ch)
    return h % 100000


bundle("hash_string", """
unsigned int hash_string(const char *s)
{
    unsigned int h = 5381;
    while (*s)
        h = h * 33 + (unsigned char)*s++;
    return h % 100000;
}
""", "unsigned int hash_string(const char *s);", "    print_int((long)hash_string(argv[1]));\n    print_nl();",
    [("",), ("abc",), ("binary lifting",)], lambda s: line(djb2(s)))


def leap(y):
    return 1 if (y % 4 == 0 and y % 100 != 0) or y % 400 == 0 else 0


bundle("is_leap_year", """
int is_leap_year(int y)
{
    if (y % 400 == 0)
        return 1;
    if (y % 100 == 0)
        return 0;
    return y % 4 == 0;
}
""", "int is_leap_year(int y);", int_main("is_leap_year", 1),
    [(1900,), (2000,), (2024,), (2023,)], lambda y: line(leap(int(y))))

bundle("count_char", """
int count_char(const char *s, int c)
{
    int n = 0;
    int i;
    for (i = 0; s[i] != '\\0'; i++) {
        if (s[i] == c)
            n++;
    }
    return n;
}
""", "int count_char(const char *s, int c);",
    "    print_int(count_char(argv[1], argv[2][0]));\n    print_nl();",
    [("banana", "a"), ("mississippi", "s"), ("xyz", "q")], lambda s, c: line(s.count(c[0])))

bundle("greet", """
char greet_buf[32];
const char greet_prefix[] = "hello, ";

const char *greet(const char *name)
{
    int i = 0, j = 0;
    while (greet_prefix[i]) {
        greet_buf[i] = greet_prefix[i];
        i++;
    }
    while (name[j] && i < 31)
        greet_buf[i++] = name[j++];
    greet_buf[i] = '\\0';
    return greet_buf;
}
""", "const char *greet(const char *name);", "    print_str(greet(argv[1]));\n    print_nl();",
    [("world",), ("x",)], lambda n: line(("hello, " + n)[:31]))

bundle("clamp_sum", """
int clamp_sum(int a, int b, int lo, int hi)
{
    int s = a + b;
    if (s < lo)
        s = lo;
    else if (s > hi)
        s = hi;
    return s;
}
""", "int clamp_sum(int a, int b, int lo, int hi);", int_main("clamp_sum", 4),
    [(1, 2, 0, 10), (8, 9, 0, 10), (-5, -6, -3, 3)],
    lambda a, b, lo, hi: line(min(max(int(a) + int(b), int(lo)), int(hi))))


def check(b):
    for bits in b["bitness"]:
        for opt in ("-O0", "-O2"):
            with tempfile.TemporaryDirectory() as tmp:
                src = os.path.join(tmp, "t.c")
                exe = os.path.join(tmp, "t")
                text = b["scaffold"] + "\n" + b["source"]
                if bits == 32:
                    text = text.replace("typedef unsigned long size_t;", "typedef unsigned int size_t;")
                with open(src, "w") as f:
                    f.write(text)
                subprocess.run(["gcc", f"-m{bits}", opt, *b["cflags"], src, "-o", exe], check=True)
                for ex in b["io_examples"]:
                    out = subprocess.run([exe, *ex["args"]], capture_output=True, text=True, timeout=10)
                    if out.stdout != ex["expected_stdout"] or out.returncode != ex["expected_return"]:
                        sys.exit(f"{b['func_name']} -m{bits} {opt} {ex['args']}: got {out.stdout!r}/{out.returncode}, want {ex['expected_stdout']!r}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()
    os.makedirs(OUT, exist_ok=True)
    for b in BUNDLES:
        if args.check:
            check(b)
        with open(os.path.join(OUT, b["func_name"] + ".json"), "w") as f:
            json.dump(b, f, indent=2)
            f.write("\n")
    print(f"{len(BUNDLES)} bundles")


if __name__ == "__main__":
    main()
