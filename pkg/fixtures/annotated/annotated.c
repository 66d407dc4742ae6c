/* Token-bucket rate limiting helpers for a toy TCP stack.
 *
 * Deliberately exercises every extraction corner: plain definitions,
 * macro-wrapped definitions, conditional compilation inside a body,
 * string literals full of braces, and multi-line signatures.
 */

#define DEFINE_TCP_HOOK(name, ...) \
    static void name(__VA_ARGS__)

struct rate_bucket {
    unsigned int tokens;
    unsigned int limit;
};

static unsigned int bucket_table[4] = {16, 32, 64, 128};

static unsigned int clamp_add(unsigned int a, unsigned int b)
{
    unsigned int s = a + b;
    if (s < a)
        return 0xffffffffu;
    return s;
}

/* Refill one bucket; the limit is a hard ceiling. */
static void bucket_refill(struct rate_bucket *rb, unsigned int amount)
{
    rb->tokens = clamp_add(rb->tokens, amount);
    if (rb->tokens > rb->limit)
        rb->tokens = rb->limit;
}

static unsigned int bucket_depth(void)
{
    unsigned int total = 0;
    unsigned int i;
    for (i = 0; i < 4; i++)
        total += bucket_table[i];
    return total;
}

static int bucket_take(struct rate_bucket *rb, unsigned int want)
{
    /* Brace soup in a string must not confuse anyone: "{ } } {". */
    const char *tag = "{ not a brace }";
    if (rb->tokens < want)
        return -1;
    rb->tokens -= want;
    return tag[0] == '{' ? 0 : 1;
}

static int classify_backoff(unsigned int retries)
{
    switch (retries) {
    case 0:
        return 0;
    case 1:
    case 2:
        return 1;
    default:
        return 2;
    }
}

// Line comments directly above a definition form its doc block.
// They stay attached even when the body holds more comments.
static void note_drop(unsigned int count)
{
    // A dropped segment only bumps a counter in this toy stack.
    (void)count;
}

static struct rate_bucket *bucket_for_class(int klass)
{
    static struct rate_bucket buckets[3];
    if (klass < 0 || klass > 2)
        klass = 0;
    return &buckets[klass];
}

static unsigned int
window_scale_shift(unsigned int window, unsigned int target)
{
    unsigned int shift = 0;
    while (window > target && shift < 14) {
        window >>= 1;
        shift++;
    }
    return shift;
}

static unsigned int probe_interval_ms(unsigned int rtt_ms)
{
#ifdef TOY_SLOW_PROBES
    rtt_ms = clamp_add(rtt_ms, 200);
#else
    rtt_ms = clamp_add(rtt_ms, 50);
#endif
    return rtt_ms;
}

DEFINE_TCP_HOOK(tcp_rx_hook, struct sock *sk, unsigned int seq)
{
    (void)sk;
    (void)seq;
}

static void bucket_reset_all(void)
{
    unsigned int i;
    for (i = 0; i < 4; i++)
        bucket_table[i] = 0;
}
