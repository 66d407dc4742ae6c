/* Minimal stand-ins for the kernel typedefs the toy sources use. */

typedef unsigned char u8;
typedef unsigned short u16;
typedef unsigned int u32;
typedef unsigned long long u64;
typedef long ssize_t;
typedef unsigned long ksize_t;
typedef int kbool;

struct sock {
	int sk_state;
};

struct sk_buff {
	unsigned int len;
};
